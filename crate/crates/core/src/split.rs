//! Held-out fact compositions.
//!
//! A pattern such as `rail_down=1,edge_sitting=1,caregiver_near=1` moves every
//! matching sample into the test set, so the training set sees each fact value
//! but never the full combination.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::vocab::Vocabulary;

/// Conjunction of fact assignments, by fact name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutPattern {
    pub assignments: Vec<(String, u8)>,
}

impl HoldoutPattern {
    pub fn resolve(&self, vocab: &Vocabulary) -> Result<Vec<(usize, u8)>> {
        if self.assignments.is_empty() {
            return Err(Error::Config("holdout pattern is empty".into()));
        }
        self.assignments
            .iter()
            .map(|(id, v)| Ok((vocab.fact_index(id)?, *v)))
            .collect()
    }
}

impl FromStr for HoldoutPattern {
    type Err = Error;

    /// Parses `fact=0|1` pairs separated by commas.
    fn from_str(s: &str) -> Result<Self> {
        let assignments = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|term| {
                let (name, value) = term
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("expected fact=value, got {term:?}")))?;
                let value = match value.trim() {
                    "0" => 0,
                    "1" => 1,
                    other => return Err(Error::Config(format!("fact value must be 0 or 1, got {other:?}"))),
                };
                Ok((name.trim().to_string(), value))
            })
            .collect::<Result<Vec<_>>>()?;
        if assignments.is_empty() {
            return Err(Error::Config("holdout pattern is empty".into()));
        }
        Ok(Self { assignments })
    }
}

impl fmt::Display for HoldoutPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, v)) in self.assignments.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{name}={v}")?;
        }
        Ok(())
    }
}

/// One or more patterns; a sample is held out if it matches any of them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutSpec {
    pub patterns: Vec<HoldoutPattern>,
}

impl HoldoutSpec {
    /// The exit-risk composition with a caregiver present.
    pub fn clinic8_default() -> Self {
        "rail_down=1,edge_sitting=1,caregiver_near=1".parse().expect("valid literal")
    }

    fn resolve(&self, vocab: &Vocabulary) -> Result<Vec<Vec<(usize, u8)>>> {
        if self.patterns.is_empty() {
            return Err(Error::Config("holdout spec names no pattern".into()));
        }
        self.patterns.iter().map(|p| p.resolve(vocab)).collect()
    }
}

impl FromStr for HoldoutSpec {
    type Err = Error;

    /// Patterns separated by `;`.
    fn from_str(s: &str) -> Result<Self> {
        let patterns = s
            .split(';')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { patterns })
    }
}

fn matches(facts: &[u8], pattern: &[(usize, u8)]) -> bool {
    pattern.iter().all(|&(i, v)| facts[i] == v)
}

/// Train and held-out partitions, preserving corpus order.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositionalSplit {
    pub train: Vec<Scenario>,
    pub test: Vec<Scenario>,
}

/// Moves every sample matching a held-out pattern to the test set.
///
/// Fails if some class present in the corpus would lose all of its training
/// samples.
pub fn compositional_split(corpus: &[Scenario], spec: &HoldoutSpec, vocab: &Vocabulary) -> Result<CompositionalSplit> {
    let patterns = spec.resolve(vocab)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in corpus {
        if s.facts.len() != vocab.num_facts() {
            return Err(Error::shape("sample facts", vocab.num_facts(), s.facts.len()));
        }
        if patterns.iter().any(|p| matches(&s.facts, p)) {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    for class in 0..vocab.num_classes() {
        let before = corpus.iter().any(|s| s.label == class);
        let after = train.iter().any(|s| s.label == class);
        if before && !after {
            return Err(Error::Config(format!(
                "holdout removes every training sample of class {}",
                vocab.class_id(class)?
            )));
        }
    }
    debug_assert!(train.iter().all(|s| patterns.iter().all(|p| !matches(&s.facts, p))));
    Ok(CompositionalSplit { train, test })
}

/// Samples whose full fact pattern never occurs in `reference`.
pub fn novel_patterns<'a>(samples: &'a [Scenario], reference: &[Scenario]) -> Vec<&'a Scenario> {
    let seen: std::collections::HashSet<&[u8]> = reference.iter().map(|s| s.facts.as_slice()).collect();
    samples.iter().filter(|s| !seen.contains(s.facts.as_slice())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::GeneratorConfig;

    #[test]
    fn parse_and_display_roundtrip() {
        let p: HoldoutPattern = "a=1, b=0".parse().unwrap();
        assert_eq!(p.assignments, vec![("a".into(), 1), ("b".into(), 0)]);
        assert_eq!(p.to_string(), "a=1,b=0");
        assert!("a=2".parse::<HoldoutPattern>().is_err());
        assert!("a".parse::<HoldoutPattern>().is_err());
        assert!("".parse::<HoldoutPattern>().is_err());
        let s: HoldoutSpec = "a=1;b=1,c=0".parse().unwrap();
        assert_eq!(s.patterns.len(), 2);
    }

    #[test]
    fn default_holdout_moves_matches() {
        let g = GeneratorConfig::clinic8().compile().unwrap();
        let corpus = g.generate(3000);
        let split = compositional_split(&corpus, &HoldoutSpec::clinic8_default(), g.vocabulary()).unwrap();
        assert_eq!(split.train.len() + split.test.len(), corpus.len());
        assert!(!split.test.is_empty());
        for s in &split.test {
            assert_eq!((s.facts[0], s.facts[1], s.facts[2]), (1, 1, 1));
        }
        // every pairwise combination of the three is still trained on
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            assert!(split.train.iter().any(|s| s.facts[a] == 1 && s.facts[b] == 1));
        }
    }

    #[test]
    fn unseen_pattern_gives_empty_test_set() {
        let g = GeneratorConfig::clinic8().compile().unwrap();
        let corpus: Vec<_> = g.generate(500).into_iter().filter(|s| s.facts[7] == 0).collect();
        let spec: HoldoutSpec = "lights_on=1".parse().unwrap();
        let split = compositional_split(&corpus, &spec, g.vocabulary()).unwrap();
        assert!(split.test.is_empty());
        assert_eq!(split.train.len(), corpus.len());
    }

    #[test]
    fn overlapping_patterns_use_union() {
        let g = GeneratorConfig::clinic8().compile().unwrap();
        let corpus = g.generate(1000);
        let spec: HoldoutSpec = "rail_down=1,lights_on=1;rail_down=1,standing=1".parse().unwrap();
        let split = compositional_split(&corpus, &spec, g.vocabulary()).unwrap();
        let expected = corpus
            .iter()
            .filter(|s| s.facts[0] == 1 && (s.facts[7] == 1 || s.facts[6] == 1))
            .count();
        assert_eq!(split.test.len(), expected);
        let mut ids: Vec<u64> = split.test.iter().map(|s| s.id).collect();
        ids.dedup();
        assert_eq!(ids.len(), split.test.len());
    }

    #[test]
    fn removing_a_class_is_an_error() {
        let g = GeneratorConfig::clinic8().compile().unwrap();
        let corpus = g.generate(500);
        // fall requires on_bed = 0
        let spec: HoldoutSpec = "on_bed=0".parse().unwrap();
        assert!(compositional_split(&corpus, &spec, g.vocabulary()).is_err());
        let spec: HoldoutSpec = "nope=1".parse().unwrap();
        assert!(matches!(
            compositional_split(&corpus, &spec, g.vocabulary()),
            Err(Error::UnknownFact(_))
        ));
    }

    #[test]
    fn novelty_is_pattern_absence() {
        let g = GeneratorConfig::clinic8().compile().unwrap();
        let corpus = g.generate(200);
        assert!(novel_patterns(&corpus[..50], &corpus).is_empty());
        assert_eq!(novel_patterns(&corpus, &[]).len(), corpus.len());
    }
}
