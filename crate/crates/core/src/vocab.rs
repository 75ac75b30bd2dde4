//! Fact and class vocabularies.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactDescriptor {
    pub id: String,
    #[serde(default)]
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDescriptor {
    pub id: String,
    #[serde(default)]
    pub label: String,
    /// Predicting this class raises an alarm; drives the false-alarm rate.
    #[serde(default)]
    pub risk: bool,
}

/// Ordered fact predicates and activity classes. Indices are positions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub facts: Vec<FactDescriptor>,
    pub classes: Vec<ClassDescriptor>,
}

impl Vocabulary {
    pub fn new(facts: Vec<FactDescriptor>, classes: Vec<ClassDescriptor>) -> Result<Self> {
        let v = Self { facts, classes };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.facts.is_empty() {
            return Err(Error::Config("vocabulary has no facts".into()));
        }
        if self.classes.len() < 2 {
            return Err(Error::Config("vocabulary needs at least two classes".into()));
        }
        let mut seen = HashSet::new();
        for id in self.facts.iter().map(|f| &f.id) {
            if id.is_empty() || !seen.insert(id.as_str()) {
                return Err(Error::Config(format!("duplicate or empty fact id {id:?}")));
            }
        }
        seen.clear();
        for id in self.classes.iter().map(|c| &c.id) {
            if id.is_empty() || !seen.insert(id.as_str()) {
                return Err(Error::Config(format!("duplicate or empty class id {id:?}")));
            }
        }
        Ok(())
    }

    pub fn num_facts(&self) -> usize {
        self.facts.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn fact_index(&self, id: &str) -> Result<usize> {
        self.facts
            .iter()
            .position(|f| f.id == id)
            .ok_or_else(|| Error::UnknownFact(id.to_string()))
    }

    pub fn class_index(&self, id: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::UnknownClass(id.to_string()))
    }

    pub fn fact_id(&self, index: usize) -> Result<&str> {
        self.facts
            .get(index)
            .map(|f| f.id.as_str())
            .ok_or_else(|| Error::UnknownFact(format!("#{index}")))
    }

    pub fn class_id(&self, index: usize) -> Result<&str> {
        self.classes
            .get(index)
            .map(|c| c.id.as_str())
            .ok_or(Error::ClassOutOfRange {
                index,
                classes: self.classes.len(),
            })
    }

    pub fn is_risk(&self, class: usize) -> bool {
        self.classes.get(class).is_some_and(|c| c.risk)
    }

    pub fn risk_classes(&self) -> Vec<usize> {
        (0..self.classes.len()).filter(|&c| self.is_risk(c)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fact(id: &str) -> FactDescriptor {
        FactDescriptor { id: id.into(), label: String::new() }
    }

    fn class(id: &str, risk: bool) -> ClassDescriptor {
        ClassDescriptor { id: id.into(), label: String::new(), risk }
    }

    #[test]
    fn lookups_are_positional() {
        let v = Vocabulary::new(
            vec![fact("a"), fact("b")],
            vec![class("ok", false), class("bad", true)],
        )
        .unwrap();
        assert_eq!(v.fact_index("b").unwrap(), 1);
        assert_eq!(v.class_id(1).unwrap(), "bad");
        assert_eq!(v.risk_classes(), vec![1]);
        assert!(matches!(v.fact_index("zzz"), Err(Error::UnknownFact(_))));
        assert!(matches!(v.class_id(9), Err(Error::ClassOutOfRange { .. })));
    }

    #[test]
    fn duplicates_rejected() {
        let err = Vocabulary::new(vec![fact("a"), fact("a")], vec![class("x", false), class("y", false)]);
        assert!(err.is_err());
        let err = Vocabulary::new(vec![], vec![class("x", false), class("y", false)]);
        assert!(err.is_err());
    }
}
