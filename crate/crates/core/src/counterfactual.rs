//! Minimal fact interventions that change a prediction.
//!
//! An intervention sets a fact confidence to exactly 0 or 1; its cost is the
//! number of facts touched. Setting a fact to the value it already has is an
//! identity and is never counted. Search runs on a frozen [`Reasoner`], so the
//! fusion stage plays no part.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logic::Reasoner;
use crate::numeric::ops::argmax;
use crate::scalar::Real;

/// Fact count above which exact search must be forced explicitly.
pub const EXACT_FACT_CAP: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Intervention {
    pub fact: usize,
    /// Target value, 0 or 1.
    pub value: u8,
}

impl Intervention {
    fn is_identity<T: Real>(&self, c: &[T]) -> bool {
        c[self.fact] == T::lit(f64::from(self.value))
    }
}

/// Applies hard interventions to a copy of `c`.
pub fn apply<T: Real>(c: &[T], delta: &[Intervention]) -> Vec<T> {
    let mut out = c.to_vec();
    for d in delta {
        out[d.fact] = T::lit(f64::from(d.value));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    /// Interventions sorted by fact index.
    pub interventions: Vec<Intervention>,
    pub cardinality: usize,
    pub original_class: usize,
    pub original_posterior: Vec<f64>,
    pub new_class: usize,
    pub new_posterior: Vec<f64>,
    /// Change of total posterior mass on the tracked classes (see [`SearchOptions`]).
    pub risk_delta: f64,
    /// `risk_delta` relative to the original tracked mass, when that is non-zero.
    pub risk_change_ratio: Option<f64>,
    /// `true` for exact search (minimal by construction), `false` for greedy.
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOptions {
    pub max_card: usize,
    /// Classes whose summed posterior is reported as the risk delta; when
    /// empty, the originally predicted class is tracked instead.
    pub risk_classes: Vec<usize>,
    pub deadline: Option<Instant>,
    /// Permit exact search above [`EXACT_FACT_CAP`] facts.
    pub force_exact: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            max_card: 3,
            risk_classes: Vec::new(),
            deadline: None,
            force_exact: false,
        }
    }
}

impl SearchOptions {
    pub fn with_max_card(mut self, k: usize) -> Self {
        self.max_card = k;
        self
    }

    pub fn with_risk_classes(mut self, classes: Vec<usize>) -> Self {
        self.risk_classes = classes;
        self
    }

    pub fn with_deadline(mut self, deadline: Instant) -> Self {
        self.deadline = Some(deadline);
        self
    }
}

fn posterior_f64<T: Real>(reasoner: &Reasoner<T>, c: &[T]) -> Vec<f64> {
    reasoner.posterior(c).iter().map(|p| p.as_f64()).collect()
}

fn tracked_mass(posterior: &[f64], tracked: &[usize]) -> f64 {
    tracked.iter().map(|&y| posterior[y]).sum()
}

struct Baseline {
    class: usize,
    posterior: Vec<f64>,
    tracked: Vec<usize>,
}

impl Baseline {
    fn new<T: Real>(reasoner: &Reasoner<T>, c: &[T], risk_classes: &[usize]) -> Result<Self> {
        if c.len() != reasoner.facts {
            return Err(Error::shape("fact confidences", reasoner.facts, c.len()));
        }
        if let Some(&bad) = risk_classes.iter().find(|&&y| y >= reasoner.classes) {
            return Err(Error::ClassOutOfRange {
                index: bad,
                classes: reasoner.classes,
            });
        }
        let posterior = posterior_f64(reasoner, c);
        if posterior.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("posterior".into()));
        }
        let class = argmax(&posterior);
        let tracked = if risk_classes.is_empty() {
            vec![class]
        } else {
            risk_classes.to_vec()
        };
        Ok(Self {
            class,
            posterior,
            tracked,
        })
    }

    fn result(&self, mut delta: Vec<Intervention>, posterior: Vec<f64>, exact: bool) -> CounterfactualResult {
        delta.sort();
        let before = tracked_mass(&self.posterior, &self.tracked);
        let risk_delta = tracked_mass(&posterior, &self.tracked) - before;
        CounterfactualResult {
            cardinality: delta.len(),
            interventions: delta,
            original_class: self.class,
            original_posterior: self.posterior.clone(),
            new_class: argmax(&posterior),
            new_posterior: posterior,
            risk_delta,
            risk_change_ratio: (before > 0.0).then(|| risk_delta / before),
            exact,
        }
    }
}

/// Margin of a flipped posterior: new top class over the original class.
fn flip_margin(posterior: &[f64], original: usize) -> f64 {
    posterior[argmax(posterior)] - posterior[original]
}

/// Calls `f` on every `k`-subset of `0..n` in lexicographic order; stops when
/// `f` returns `false`.
fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(&[usize]) -> bool) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        if !f(&idx) {
            return;
        }
        // advance to the next combination
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] < n - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Lowest-cardinality flipping intervention, by iterative deepening.
///
/// Among flips of equal cardinality the one with the larger post-flip margin
/// wins, then the lexicographically smallest `(fact, value)` list.
pub fn exact_search<T: Real>(reasoner: &Reasoner<T>, c: &[T], options: &SearchOptions) -> Result<CounterfactualResult> {
    let base = Baseline::new(reasoner, c, &options.risk_classes)?;
    let n = c.len();
    if n > EXACT_FACT_CAP && !options.force_exact {
        return Err(Error::Config(format!(
            "exact search is limited to {EXACT_FACT_CAP} facts unless forced"
        )));
    }
    let mut evaluations = 0u64;
    let mut timed_out = false;
    for k in 1..=options.max_card.min(n) {
        let mut best: Option<(f64, Vec<Intervention>, Vec<f64>)> = None;
        for_each_subset(n, k, |facts| {
            for values in 0u32..(1 << k) {
                let delta: Vec<Intervention> = facts
                    .iter()
                    .enumerate()
                    .map(|(j, &fact)| Intervention {
                        fact,
                        value: ((values >> (k - 1 - j)) & 1) as u8,
                    })
                    .collect();
                if delta.iter().any(|d| d.is_identity(c)) {
                    continue;
                }
                evaluations += 1;
                if evaluations % 1024 == 0 && options.deadline.is_some_and(|d| Instant::now() >= d) {
                    timed_out = true;
                    return false;
                }
                let post = posterior_f64(reasoner, &apply(c, &delta));
                if argmax(&post) == base.class {
                    continue;
                }
                let margin = flip_margin(&post, base.class);
                // enumeration order is lexicographic, so only a strictly
                // larger margin displaces the incumbent
                if best.as_ref().is_none_or(|(m, _, _)| margin > *m) {
                    best = Some((margin, delta, post));
                }
            }
            true
        });
        if timed_out {
            return Err(Error::Timeout);
        }
        if let Some((_, delta, post)) = best {
            return Ok(base.result(delta, post, true));
        }
    }
    Err(Error::NoCounterfactual(options.max_card))
}

/// Repeatedly applies the single intervention that most lowers the original
/// class posterior until the prediction flips.
pub fn greedy_search<T: Real>(reasoner: &Reasoner<T>, c: &[T], options: &SearchOptions) -> Result<CounterfactualResult> {
    let base = Baseline::new(reasoner, c, &options.risk_classes)?;
    let mut current = c.to_vec();
    let mut delta: Vec<Intervention> = Vec::new();
    for _ in 0..options.max_card {
        let mut best: Option<(f64, Intervention, Vec<f64>)> = None;
        for fact in 0..c.len() {
            if delta.iter().any(|d| d.fact == fact) {
                continue;
            }
            for value in [0u8, 1] {
                let step = Intervention { fact, value };
                if step.is_identity(&current) {
                    continue;
                }
                let post = posterior_f64(reasoner, &apply(&current, &[step]));
                let score = post[base.class];
                if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
                    best = Some((score, step, post));
                }
            }
        }
        let Some((_, step, post)) = best else {
            break;
        };
        current[step.fact] = T::lit(f64::from(step.value));
        delta.push(step);
        if argmax(&post) != base.class {
            // re-verify from the original vector
            let check = posterior_f64(reasoner, &apply(c, &delta));
            debug_assert_eq!(check, post);
            return Ok(base.result(delta, check, false));
        }
    }
    Err(Error::NoCounterfactual(options.max_card))
}

/// Exact search within the cap, greedy above it.
pub fn search<T: Real>(reasoner: &Reasoner<T>, c: &[T], options: &SearchOptions) -> Result<CounterfactualResult> {
    if c.len() <= EXACT_FACT_CAP || options.force_exact {
        exact_search(reasoner, c, options)
    } else {
        greedy_search(reasoner, c, options)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEntry {
    pub intervention: Intervention,
    pub posterior: Vec<f64>,
    pub predicted: usize,
    pub label_changed: bool,
    pub risk_delta: f64,
}

/// Every non-identity single-fact intervention, most risk-reducing first
/// (ties by fact, then value).
pub fn sensitivity_report<T: Real>(reasoner: &Reasoner<T>, c: &[T], risk_classes: &[usize]) -> Result<Vec<SensitivityEntry>> {
    let base = Baseline::new(reasoner, c, risk_classes)?;
    let before = tracked_mass(&base.posterior, &base.tracked);
    let mut out = Vec::with_capacity(2 * c.len());
    for fact in 0..c.len() {
        for value in [0u8, 1] {
            let iv = Intervention { fact, value };
            if iv.is_identity(c) {
                continue;
            }
            let posterior = posterior_f64(reasoner, &apply(c, &[iv]));
            let predicted = argmax(&posterior);
            out.push(SensitivityEntry {
                intervention: iv,
                risk_delta: tracked_mass(&posterior, &base.tracked) - before,
                label_changed: predicted != base.class,
                predicted,
                posterior,
            });
        }
    }
    out.sort_by(|a, b| {
        a.risk_delta
            .total_cmp(&b.risk_delta)
            .then(a.intervention.cmp(&b.intervention))
    });
    Ok(out)
}

/// Independent check of minimality: no flip exists below `cardinality`.
///
/// Enumerates all `3^N` assignments of {keep, 0, 1} directly (N must be small).
pub fn brute_force_min_cardinality<T: Real>(reasoner: &Reasoner<T>, c: &[T], max_card: usize) -> Option<usize> {
    let n = c.len();
    let original = argmax(&posterior_f64(reasoner, c));
    let mut best: Option<usize> = None;
    let total = 3u64.pow(n as u32);
    for code in 0..total {
        let mut x = code;
        let mut v = c.to_vec();
        let mut card = 0;
        for slot in v.iter_mut() {
            let choice = x % 3;
            x /= 3;
            let target = match choice {
                0 => continue,
                1 => T::zero(),
                _ => T::one(),
            };
            if *slot != target {
                *slot = target;
                card += 1;
            }
        }
        if card == 0 || card > max_card || best.is_some_and(|b| card >= b) {
            continue;
        }
        if argmax(&posterior_f64(reasoner, &v)) != original {
            best = Some(card);
        }
    }
    best
}
