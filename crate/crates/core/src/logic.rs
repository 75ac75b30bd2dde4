//! Differentiable rule layer.
//!
//! Every rule owns `L` literal slots. A slot softly selects one fact through a
//! (Gumbel-)softmax over its selection logits, a negation gate interpolates
//! between the selected fact and its complement, and the rule fires with the
//! product of its literal truths. Class scores are a bias plus a weighted sum
//! of rule strengths, normalised with softmax.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ops::{argmax, gumbel_from_uniform, sigmoid, softmax, softmax_into};
use crate::numeric::params::{Dims, Group, ParamStore};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Perturb selection logits with standard Gumbel noise.
    Sampled,
    /// No noise.
    #[default]
    Deterministic,
}

/// Gumbel-softmax temperature, annealed geometrically from `start` to `end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub start: f64,
    pub end: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self { start: 1.0, end: 0.1 }
    }
}

impl TemperatureSchedule {
    /// Temperature at `progress` in `[0, 1]` (clamped).
    pub fn at(&self, progress: f64) -> f64 {
        let t = progress.clamp(0.0, 1.0);
        self.start * (self.end / self.start).powf(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start > 0.0 && self.end > 0.0) {
            return Err(Error::Config("gumbel temperatures must be > 0".into()));
        }
        Ok(())
    }
}

/// Structure of the rule layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogicConfig {
    pub rules: usize,
    pub slots: usize,
    pub temperature: TemperatureSchedule,
    /// Snap selections to one-hot at evaluation time.
    pub eval_hard: bool,
}

impl Default for LogicConfig {
    fn default() -> Self {
        Self {
            rules: 20,
            slots: 4,
            temperature: TemperatureSchedule::default(),
            eval_hard: true,
        }
    }
}

/// Per-call selection settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionOptions {
    pub mode: SelectionMode,
    pub temperature: f64,
    /// Straight-through: forward the one-hot argmax of the soft selection.
    pub hard: bool,
}

impl SelectionOptions {
    pub fn deterministic(hard: bool) -> Self {
        Self {
            mode: SelectionMode::Deterministic,
            temperature: 1.0,
            hard,
        }
    }
}

/// Borrowed reasoning parameters.
#[derive(Clone, Copy, Debug)]
pub struct LogicParams<'a, T> {
    pub facts: usize,
    pub rules: usize,
    pub slots: usize,
    pub classes: usize,
    /// Selection logits, `M x L x N`.
    pub selection: &'a [T],
    /// Negation pre-gates, `M x L`.
    pub negation: &'a [T],
    /// `C x M`.
    pub rule_weight: &'a [T],
    pub class_bias: &'a [T],
}

impl<'a, T: Real> LogicParams<'a, T> {
    pub fn from_params(dims: &Dims, params: &'a ParamStore<T>) -> Self {
        Self {
            facts: dims.facts,
            rules: dims.rules,
            slots: dims.slots,
            classes: dims.classes,
            selection: params.value(Group::Selection),
            negation: params.value(Group::Negation),
            rule_weight: params.value(Group::RuleWeight),
            class_bias: params.value(Group::ClassBias),
        }
    }

    pub fn slot_logits(&self, rule: usize, slot: usize) -> &[T] {
        let off = (rule * self.slots + slot) * self.facts;
        &self.selection[off..off + self.facts]
    }
}

/// Per-rule trace of one forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RuleActivation<T> {
    pub rules: usize,
    pub slots: usize,
    /// Selection distributions, `M x L x N`.
    pub selections: Vec<T>,
    /// Negation gates, `M x L`.
    pub gates: Vec<T>,
    /// Literal truths, `M x L`.
    pub truths: Vec<T>,
    /// Firing strengths, `M`.
    pub strengths: Vec<T>,
}

impl<T: Real> RuleActivation<T> {
    pub fn selection(&self, rule: usize, slot: usize) -> &[T] {
        let n = self.selections.len() / (self.rules * self.slots);
        let off = (rule * self.slots + slot) * n;
        &self.selections[off..off + n]
    }
}

pub fn sample_gumbel<T: Real, R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<T> {
    (0..len)
        .map(|_| gumbel_from_uniform(rng.random::<f64>()))
        .collect()
}

/// One-hot vector at the argmax of `p`.
pub fn one_hot_argmax<T: Real>(p: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); p.len()];
    out[argmax(p)] = T::one();
    out
}

/// Soft (or straight-through hard) selection over facts for one slot.
pub fn select_literal<T: Real, R: Rng + ?Sized>(
    logits: &[T],
    temperature: T,
    mode: SelectionMode,
    hard: bool,
    rng: &mut R,
) -> Vec<T> {
    let noise = match mode {
        SelectionMode::Sampled => Some(sample_gumbel::<T, R>(logits.len(), rng)),
        SelectionMode::Deterministic => None,
    };
    select_with_noise(logits, temperature, noise.as_deref(), hard)
}

pub(crate) fn select_with_noise<T: Real>(
    logits: &[T],
    temperature: T,
    noise: Option<&[T]>,
    hard: bool,
) -> Vec<T> {
    let scaled: Vec<T> = match noise {
        Some(g) => logits
            .iter()
            .zip(g)
            .map(|(&l, &g)| (l + g) / temperature)
            .collect(),
        None => logits.iter().map(|&l| l / temperature).collect(),
    };
    let soft = softmax(&scaled);
    if hard {
        one_hot_argmax(&soft)
    } else {
        soft
    }
}

/// `(1 - eta) * <gamma, c> + eta * (1 - <gamma, c>)`, clamped to [0, 1].
///
/// A softmax `gamma` can sum to one ulp above 1, which would push the truth
/// past 1; the clamp only absorbs that rounding, so gradients ignore it.
#[inline]
pub fn literal_truth<T: Real>(gamma: &[T], eta: T, c: &[T]) -> T {
    let u: T = gamma.iter().zip(c).map(|(&g, &x)| g * x).sum();
    ((T::one() - eta) * u + eta * (T::one() - u)).max(T::zero()).min(T::one())
}

/// Product T-norm.
#[inline]
pub fn rule_strength<T: Real>(truths: &[T]) -> T {
    truths.iter().fold(T::one(), |acc, &m| acc * m)
}

/// Softmax over `beta_y + sum_m w[y, m] * tau_m`.
pub fn class_posterior<T: Real>(tau: &[T], rule_weight: &[T], class_bias: &[T]) -> Vec<T> {
    softmax(&class_scores(tau, rule_weight, class_bias))
}

pub fn class_scores<T: Real>(tau: &[T], rule_weight: &[T], class_bias: &[T]) -> Vec<T> {
    let m = tau.len();
    class_bias
        .iter()
        .enumerate()
        .map(|(y, &b)| {
            b + rule_weight[y * m..(y + 1) * m]
                .iter()
                .zip(tau)
                .map(|(&w, &t)| w * t)
                .sum::<T>()
        })
        .collect()
}

/// Full reasoning pass over a confidence vector.
pub fn reason<T: Real, R: Rng + ?Sized>(
    confidences: &[T],
    params: &LogicParams<'_, T>,
    options: &SelectionOptions,
    rng: &mut R,
) -> Result<(Vec<T>, RuleActivation<T>)> {
    if confidences.len() != params.facts {
        return Err(Error::shape("fact confidences", params.facts, confidences.len()));
    }
    let temperature = T::lit(options.temperature);
    let mut selections = Vec::with_capacity(params.selection.len());
    for m in 0..params.rules {
        for j in 0..params.slots {
            selections.extend(select_literal(
                params.slot_logits(m, j),
                temperature,
                options.mode,
                options.hard,
                rng,
            ));
        }
    }
    let reasoner = Reasoner::new(params, selections);
    let act = reasoner.activation(confidences);
    let posterior = reasoner.posterior_from_strengths(&act.strengths);
    Ok((posterior, act))
}

/// Reasoning layer with selections frozen, for repeated evaluation on many
/// confidence vectors (inference, counterfactual search).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Reasoner<T> {
    pub facts: usize,
    pub rules: usize,
    pub slots: usize,
    pub classes: usize,
    pub selections: Vec<T>,
    pub gates: Vec<T>,
    pub rule_weight: Vec<T>,
    pub class_bias: Vec<T>,
}

impl<T: Real> Reasoner<T> {
    pub fn new(params: &LogicParams<'_, T>, selections: Vec<T>) -> Self {
        Self {
            facts: params.facts,
            rules: params.rules,
            slots: params.slots,
            classes: params.classes,
            selections,
            gates: params.negation.iter().map(|&e| sigmoid(e)).collect(),
            rule_weight: params.rule_weight.to_vec(),
            class_bias: params.class_bias.to_vec(),
        }
    }

    /// Deterministic selections (no noise) at `temperature`, optionally hard.
    pub fn deterministic(params: &LogicParams<'_, T>, temperature: f64, hard: bool) -> Self {
        let t = T::lit(temperature);
        let mut selections = Vec::with_capacity(params.selection.len());
        for m in 0..params.rules {
            for j in 0..params.slots {
                selections.extend(select_with_noise(params.slot_logits(m, j), t, None, hard));
            }
        }
        Self::new(params, selections)
    }

    pub fn selection(&self, rule: usize, slot: usize) -> &[T] {
        let off = (rule * self.slots + slot) * self.facts;
        &self.selections[off..off + self.facts]
    }

    pub fn gate(&self, rule: usize, slot: usize) -> T {
        self.gates[rule * self.slots + slot]
    }

    pub fn strengths(&self, c: &[T]) -> Vec<T> {
        (0..self.rules)
            .map(|m| {
                (0..self.slots).fold(T::one(), |acc, j| {
                    acc * literal_truth(self.selection(m, j), self.gate(m, j), c)
                })
            })
            .collect()
    }

    pub fn activation(&self, c: &[T]) -> RuleActivation<T> {
        let mut truths = Vec::with_capacity(self.rules * self.slots);
        let mut strengths = Vec::with_capacity(self.rules);
        for m in 0..self.rules {
            let start = truths.len();
            for j in 0..self.slots {
                truths.push(literal_truth(self.selection(m, j), self.gate(m, j), c));
            }
            strengths.push(rule_strength(&truths[start..]));
        }
        RuleActivation {
            rules: self.rules,
            slots: self.slots,
            selections: self.selections.clone(),
            gates: self.gates.clone(),
            truths,
            strengths,
        }
    }

    pub fn scores(&self, c: &[T]) -> Vec<T> {
        class_scores(&self.strengths(c), &self.rule_weight, &self.class_bias)
    }

    pub fn posterior_from_strengths(&self, tau: &[T]) -> Vec<T> {
        class_posterior(tau, &self.rule_weight, &self.class_bias)
    }

    pub fn posterior(&self, c: &[T]) -> Vec<T> {
        let scores = self.scores(c);
        let mut out = vec![T::zero(); scores.len()];
        softmax_into(&scores, &mut out);
        out
    }

    pub fn predict(&self, c: &[T]) -> usize {
        argmax(&self.scores(c))
    }
}
