//! Named parameter groups with matching gradient accumulators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Sizes that fix every parameter shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Number of atomic facts `N`.
    pub facts: usize,
    /// Per-view feature dimension `D`.
    pub features: usize,
    /// Number of rules `M`.
    pub rules: usize,
    /// Literal slots per rule `L`.
    pub slots: usize,
    /// Number of classes `C`.
    pub classes: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("facts", self.facts),
            ("features", self.features),
            ("rules", self.rules),
            ("slots", self.slots),
            ("classes", self.classes),
        ];
        for (name, v) in named {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn shape_of(&self, group: Group) -> Vec<usize> {
        match group {
            Group::PredWeight | Group::RelWeight => vec![self.facts, self.features],
            Group::PredBias | Group::RelBias => vec![self.facts],
            Group::Selection => vec![self.rules, self.slots, self.facts],
            Group::Negation => vec![self.rules, self.slots],
            Group::RuleWeight => vec![self.classes, self.rules],
            Group::ClassBias => vec![self.classes],
        }
    }
}

/// Parameter groups in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    /// Fact-logit head weight, `N x D`.
    PredWeight,
    PredBias,
    /// Reliability head weight, `N x D`.
    RelWeight,
    RelBias,
    /// Literal selection logits, `M x L x N`.
    Selection,
    /// Negation pre-gates, `M x L`; the gate is their sigmoid.
    Negation,
    /// Rule-to-class weights, `C x M`.
    RuleWeight,
    ClassBias,
}

impl Group {
    pub const ALL: [Group; 8] = [
        Group::PredWeight,
        Group::PredBias,
        Group::RelWeight,
        Group::RelBias,
        Group::Selection,
        Group::Negation,
        Group::RuleWeight,
        Group::ClassBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::PredWeight => "pred_weight",
            Group::PredBias => "pred_bias",
            Group::RelWeight => "rel_weight",
            Group::RelBias => "rel_bias",
            Group::Selection => "selection",
            Group::Negation => "negation",
            Group::RuleWeight => "rule_weight",
            Group::ClassBias => "class_bias",
        }
    }

    pub fn from_name(name: &str) -> Option<Group> {
        Group::ALL.into_iter().find(|g| g.name() == name)
    }

    /// True for the fusion heads (the perception side).
    pub fn is_perception(self) -> bool {
        matches!(
            self,
            Group::PredWeight | Group::PredBias | Group::RelWeight | Group::RelBias
        )
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ParamGroup<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    #[serde(skip)]
    pub grad: Vec<T>,
}

impl<T: Real> ParamGroup<T> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            value: vec![T::zero(); len],
            grad: vec![T::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// All learnable parameters of a model, one group per [`Group`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    groups: Vec<ParamGroup<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn zeros(dims: &Dims) -> Self {
        let groups = Group::ALL
            .iter()
            .map(|&g| ParamGroup::zeros(dims.shape_of(g)))
            .collect();
        Self { groups }
    }

    /// Rebuilds a store from raw value arrays, checking shapes against `dims`.
    pub fn from_values(dims: &Dims, mut values: Vec<(Group, Vec<T>)>) -> Result<Self> {
        let mut store = Self::zeros(dims);
        for (group, data) in values.drain(..) {
            let slot = store.get_mut(group);
            if data.len() != slot.len() {
                return Err(Error::shape(group.name(), slot.len(), data.len()));
            }
            slot.value = data;
        }
        Ok(store)
    }

    /// Converts every value to another scalar type; gradients are reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let groups = self
            .groups
            .iter()
            .map(|g| ParamGroup {
                shape: g.shape.clone(),
                value: g.value.iter().map(|&x| U::lit(x.as_f64())).collect(),
                grad: vec![U::zero(); g.value.len()],
            })
            .collect();
        ParamStore { groups }
    }

    #[inline]
    pub fn get(&self, group: Group) -> &ParamGroup<T> {
        &self.groups[group.index()]
    }

    #[inline]
    pub fn get_mut(&mut self, group: Group) -> &mut ParamGroup<T> {
        &mut self.groups[group.index()]
    }

    #[inline]
    pub fn value(&self, group: Group) -> &[T] {
        &self.groups[group.index()].value
    }

    #[inline]
    pub fn value_mut(&mut self, group: Group) -> &mut [T] {
        &mut self.groups[group.index()].value
    }

    #[inline]
    pub fn grad(&self, group: Group) -> &[T] {
        &self.groups[group.index()].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (Group, &ParamGroup<T>)> {
        Group::ALL.iter().copied().zip(self.groups.iter())
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.groups {
            g.grad.clear();
            g.grad.resize(g.value.len(), T::zero());
        }
    }

    pub fn num_params(&self) -> usize {
        self.groups.iter().map(ParamGroup::len).sum()
    }

    /// Fails on the first group holding a non-finite gradient.
    pub fn check_finite_grads(&self) -> Result<()> {
        for (group, p) in self.iter() {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", group.name())));
            }
        }
        Ok(())
    }

    pub fn check_finite_values(&self) -> Result<()> {
        for (group, p) in self.iter() {
            if p.value.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(group.name().to_string()));
            }
        }
        Ok(())
    }
}
