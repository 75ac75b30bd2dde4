//! Terms of the joint objective: classification cross-entropy, fact grounding
//! BCE, and the rule sparsity penalty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ops::entropy;
use crate::scalar::Real;

/// Penalty applied to each slot's selection distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityForm {
    /// Shannon entropy of each selection, minimised by one-hot selections.
    #[default]
    Entropy,
    /// Literal L1 norm of each selection. Constant (= 1 per slot) for softmax
    /// outputs, so it contributes no gradient.
    L1,
}

/// Weights of the loss terms for one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LossWeights<T> {
    pub ce: T,
    pub fact: T,
    pub sparse: T,
    pub sparsity_form: SparsityForm,
    /// BCE inputs are clipped to `[clip, 1 - clip]`.
    pub clip: T,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            ce: T::one(),
            fact: T::one(),
            sparse: T::zero(),
            sparsity_form: SparsityForm::Entropy,
            clip: T::lit(1e-7),
        }
    }
}

impl<T: Real> LossWeights<T> {
    /// Every term switched off.
    pub fn zero() -> Self {
        Self {
            ce: T::zero(),
            fact: T::zero(),
            sparse: T::zero(),
            ..Self::default()
        }
    }

    pub fn cast<U: Real>(&self) -> LossWeights<U> {
        LossWeights {
            ce: U::lit(self.ce.as_f64()),
            fact: U::lit(self.fact.as_f64()),
            sparse: U::lit(self.sparse.as_f64()),
            sparsity_form: self.sparsity_form,
            clip: U::lit(self.clip.as_f64()),
        }
    }

    pub fn with_ce(mut self, w: f64) -> Self {
        self.ce = T::lit(w);
        self
    }

    pub fn with_fact(mut self, w: f64) -> Self {
        self.fact = T::lit(w);
        self
    }

    pub fn with_sparse(mut self, w: f64) -> Self {
        self.sparse = T::lit(w);
        self
    }
}

/// Loss value split by term. `total` is the sum of the weighted components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LossBreakdown<T> {
    pub total: T,
    /// Weighted cross-entropy.
    pub ce: T,
    /// Weighted fact-grounding BCE; absent when no fact labels were seen.
    pub fact: Option<T>,
    /// Weighted sparsity penalty.
    pub sparsity: T,
    /// Calibration slot; no calibration loss is defined, so always absent.
    pub calibration: Option<T>,
}

impl<T: Real> LossBreakdown<T> {
    pub fn component_sum(&self) -> T {
        self.ce + self.fact.unwrap_or_else(T::zero) + self.sparsity + self.calibration.unwrap_or_else(T::zero)
    }
}

#[inline]
pub fn clip_confidence<T: Real>(c: T, clip: T) -> T {
    c.max(clip).min(T::one() - clip)
}

/// Binary cross-entropy of confidence `c` against target `p`, with `c` clipped.
#[inline]
pub fn bce<T: Real>(c: T, p: T, clip: T) -> T {
    let cc = clip_confidence(c, clip);
    -(p * cc.ln() + (T::one() - p) * (T::one() - cc).ln())
}

/// `d bce / d c`; zero where the clip is active.
#[inline]
pub fn bce_grad<T: Real>(c: T, p: T, clip: T) -> T {
    if c < clip || c > T::one() - clip {
        T::zero()
    } else {
        (c - p) / (c * (T::one() - c))
    }
}

/// Sparsity of all slot selections; `selections` is a concatenation of
/// simplex points of length `facts`.
pub fn selection_sparsity<T: Real>(selections: &[T], facts: usize, form: SparsityForm) -> T {
    selections
        .chunks(facts)
        .map(|g| match form {
            SparsityForm::Entropy => entropy(g),
            SparsityForm::L1 => g.iter().map(|x| x.abs()).sum(),
        })
        .sum()
}

pub fn l1<T: Real>(xs: &[T]) -> T {
    xs.iter().map(|x| x.abs()).sum()
}

/// Single-sample objective from already computed forward values.
#[allow(clippy::too_many_arguments)]
pub fn compute_loss<T: Real>(
    posterior: &[T],
    label: usize,
    confidences: &[T],
    fact_labels: Option<&[T]>,
    selections: &[T],
    rule_weight: &[T],
    weights: &LossWeights<T>,
) -> Result<LossBreakdown<T>> {
    if label >= posterior.len() {
        return Err(Error::ClassOutOfRange {
            index: label,
            classes: posterior.len(),
        });
    }
    let facts = confidences.len();
    let ce = -posterior[label].max(T::min_positive_value()).ln() * weights.ce;
    let fact = match fact_labels {
        Some(p) => {
            if p.len() != facts {
                return Err(Error::shape("fact labels", facts, p.len()));
            }
            let s: T = confidences
                .iter()
                .zip(p)
                .map(|(&c, &p)| bce(c, p, weights.clip))
                .sum();
            Some(s * weights.fact)
        }
        None => None,
    };
    let sparsity = weights.sparse
        * (selection_sparsity(selections, facts, weights.sparsity_form) + l1(rule_weight));
    let mut out = LossBreakdown {
        total: T::zero(),
        ce,
        fact,
        sparsity,
        calibration: None,
    };
    out.total = out.component_sum();
    Ok(out)
}
