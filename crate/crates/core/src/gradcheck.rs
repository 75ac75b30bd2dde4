//! Central finite-difference check of the analytic gradients.
//!
//! Cases are built in `f64` and evaluated in any [`Real`]. The reference
//! check runs in [`DoubleDouble`]: with `h = 1e-5` the `f64` cancellation
//! noise is around `1e-11`, which is above the `1e-8` relative floor times the
//! tolerance for gradients that vanish by symmetry (e.g. the reliability bias,
//! which every view shares and the attribution softmax ignores).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fusion::Pooling;
use crate::logic::LogicConfig;
use crate::loss::LossWeights;
use crate::model::{Example, InitConfig, LogicModel, SelectionDraw};
use crate::numeric::dd::DoubleDouble;
use crate::numeric::params::{Dims, Group, ParamStore};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: Group,
    pub params: usize,
    /// `max |analytic - numeric| / max(|numeric|, 1e-8)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub h: f64,
    pub tol: f64,
    pub groups: Vec<GroupReport>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failing_groups(&self) -> Vec<Group> {
        self.groups.iter().filter(|g| !g.passed).map(|g| g.group).collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

/// Central differences `(L(p + h) - L(p - h)) / 2h` for every parameter.
pub fn numeric_gradients<T: Real>(
    model: &LogicModel<T>,
    batch: &[Example<'_, T>],
    weights: &LossWeights<T>,
    draw: &SelectionDraw<T>,
    h: f64,
) -> Result<Vec<(Group, Vec<T>)>> {
    let mut scratch = model.clone();
    let h_t = T::lit(h);
    let mut out = Vec::with_capacity(Group::ALL.len());
    for group in Group::ALL {
        let len = model.params.get(group).len();
        let mut grads = Vec::with_capacity(len);
        for i in 0..len {
            let orig = scratch.params.value(group)[i];
            scratch.params.value_mut(group)[i] = orig + h_t;
            let plus = scratch.forward_backward(batch, weights, draw)?.total;
            scratch.params.value_mut(group)[i] = orig - h_t;
            let minus = scratch.forward_backward(batch, weights, draw)?.total;
            scratch.params.value_mut(group)[i] = orig;
            grads.push((plus - minus) / (h_t + h_t));
        }
        out.push((group, grads));
    }
    Ok(out)
}

/// Compares the gradient accumulators of `analytic` against `numeric`.
pub fn compare_gradients<T: Real>(
    analytic: &ParamStore<T>,
    numeric: &[(Group, Vec<T>)],
    h: f64,
    tol: f64,
) -> GradCheckReport {
    let groups: Vec<GroupReport> = numeric
        .iter()
        .map(|(group, num)| {
            let ana = analytic.grad(*group);
            let mut max_rel = 0.0f64;
            let mut max_abs = 0.0f64;
            for (&a, &n) in ana.iter().zip(num) {
                let (a, n) = (a.as_f64(), n.as_f64());
                let abs = (a - n).abs();
                max_abs = max_abs.max(abs);
                max_rel = max_rel.max(abs / n.abs().max(1e-8));
            }
            GroupReport {
                group: *group,
                params: num.len(),
                max_rel_error: max_rel,
                max_abs_error: max_abs,
                passed: max_rel < tol,
            }
        })
        .collect();
    let passed = groups.iter().all(|g| g.passed);
    GradCheckReport { h, tol, groups, passed }
}

pub fn finite_diff_check<T: Real>(
    model: &LogicModel<T>,
    batch: &[Example<'_, T>],
    weights: &LossWeights<T>,
    draw: &SelectionDraw<T>,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let mut analytic = model.clone();
    analytic.forward_backward(batch, weights, draw)?;
    let numeric = numeric_gradients(model, batch, weights, draw, h)?;
    Ok(compare_gradients(&analytic.params, &numeric, h, tol))
}

/// A small random model with a batch, loss weights and a fixed Gumbel draw.
#[derive(Clone, Debug)]
pub struct GradCheckCase {
    pub model: LogicModel<f64>,
    pub views: Vec<Vec<Vec<f64>>>,
    pub labels: Vec<usize>,
    pub fact_labels: Vec<Option<Vec<f64>>>,
    pub weights: LossWeights<f64>,
    pub draw: SelectionDraw<f64>,
}

impl GradCheckCase {
    /// Seeded case with `N <= 8, M <= 4, L <= 3, V <= 3, C <= 4`.
    pub fn random(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims {
            facts: rng.random_range(2..=8),
            features: rng.random_range(2..=5),
            rules: rng.random_range(1..=4),
            slots: rng.random_range(1..=3),
            classes: rng.random_range(2..=4),
        };
        let views = rng.random_range(1..=3);
        let logic = LogicConfig {
            rules: dims.rules,
            slots: dims.slots,
            ..LogicConfig::default()
        };
        let mut model = LogicModel::init(dims, logic, &InitConfig::default(), &mut rng)?;
        if rng.random_bool(0.25) {
            model.pooling = Pooling::Uniform;
        }
        let scales = [
            (Group::PredWeight, 1.0),
            (Group::PredBias, 0.5),
            (Group::RelWeight, 1.0),
            (Group::RelBias, 0.5),
            (Group::Selection, 1.0),
            (Group::Negation, 2.0),
            (Group::RuleWeight, 2.0),
            (Group::ClassBias, 1.0),
        ];
        for (group, scale) in scales {
            for x in model.params.value_mut(group) {
                let mut v: f64 = rng.random_range(-scale..scale);
                // keep clear of the L1 kink at 0
                if group == Group::RuleWeight && v.abs() < 0.05 {
                    v += 0.1f64.copysign(v);
                }
                *x = v;
            }
        }
        let batch = 3;
        let sample_views: Vec<Vec<Vec<f64>>> = (0..batch)
            .map(|_| {
                (0..views)
                    .map(|_| (0..dims.features).map(|_| rng.random_range(-1.5..1.5)).collect())
                    .collect()
            })
            .collect();
        let labels = (0..batch).map(|_| rng.random_range(0..dims.classes)).collect();
        let fact_labels = (0..batch)
            .map(|_| {
                rng.random_bool(0.7).then(|| {
                    (0..dims.facts)
                        .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
                        .collect()
                })
            })
            .collect();
        let weights = LossWeights::default()
            .with_fact(rng.random_range(0.5..1.5))
            .with_sparse(rng.random_range(0.01..0.1));
        let temperature = rng.random_range(0.5..2.0);
        let draw = if rng.random_bool(0.5) {
            SelectionDraw::sampled(&dims, temperature, false, &mut rng)
        } else {
            SelectionDraw::deterministic(temperature)
        };
        Ok(Self {
            model,
            views: sample_views,
            labels,
            fact_labels,
            weights,
            draw,
        })
    }

    pub fn batch(&self) -> Vec<Example<'_, f64>> {
        self.views
            .iter()
            .zip(&self.labels)
            .zip(&self.fact_labels)
            .map(|((v, &label), f)| Example {
                views: v,
                label,
                fact_labels: f.as_deref(),
            })
            .collect()
    }

    /// Runs the check with every quantity converted to `T`.
    pub fn check_in<T: Real>(&self, h: f64, tol: f64) -> Result<GradCheckReport> {
        let conv = |xs: &[f64]| -> Vec<T> { xs.iter().map(|&x| T::lit(x)).collect() };
        let views: Vec<Vec<Vec<T>>> = self
            .views
            .iter()
            .map(|sample| sample.iter().map(|v| conv(v)).collect())
            .collect();
        let fact_labels: Vec<Option<Vec<T>>> = self
            .fact_labels
            .iter()
            .map(|f| f.as_deref().map(conv))
            .collect();
        let batch: Vec<Example<'_, T>> = views
            .iter()
            .zip(&self.labels)
            .zip(&fact_labels)
            .map(|((v, &label), f)| Example {
                views: v,
                label,
                fact_labels: f.as_deref(),
            })
            .collect();
        finite_diff_check(
            &self.model.cast::<T>(),
            &batch,
            &self.weights.cast(),
            &self.draw.cast(),
            h,
            tol,
        )
    }

    /// Double-double check; see the module docs for why not `f64`.
    pub fn check(&self, h: f64, tol: f64) -> Result<GradCheckReport> {
        self.check_in::<DoubleDouble>(h, tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_loss_has_zero_gradients() {
        let case = GradCheckCase::random(1).unwrap();
        let report = finite_diff_check(
            &case.model,
            &case.batch(),
            &LossWeights::zero(),
            &case.draw,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed);
        assert!(report.groups.iter().all(|g| g.max_abs_error == 0.0));
    }

    #[test]
    fn default_toy_case_passes() {
        let case = GradCheckCase::random(7).unwrap();
        let report = case.check(1e-5, 1e-4).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn sign_flip_in_selection_gradient_is_caught() {
        let mut case = GradCheckCase::random(3).unwrap();
        // make sure the selection logits carry gradient
        case.model.pooling = Pooling::Reliability;
        let batch = case.batch();
        let mut analytic = case.model.clone();
        analytic
            .forward_backward(&batch, &case.weights, &case.draw)
            .unwrap();
        for g in &mut analytic.params.get_mut(Group::Selection).grad {
            *g = -*g;
        }
        let numeric = numeric_gradients(&case.model, &batch, &case.weights, &case.draw, 1e-5).unwrap();
        let report = compare_gradients(&analytic.params, &numeric, 1e-5, 1e-4);
        assert_eq!(report.failing_groups(), vec![Group::Selection]);
    }

    #[test]
    fn straight_through_forward_uses_soft_gradient() {
        // hard forward is not differentiable in the forward sense, but the
        // reported gradient must equal the soft path's gradient wrt the
        // non-selection parameters when the hard and soft forwards coincide.
        let mut case = GradCheckCase::random(5).unwrap();
        for x in case.model.params.value_mut(Group::Selection) {
            *x *= 200.0;
        }
        let batch = case.batch();
        let soft = SelectionDraw::deterministic(1.0);
        let hard = SelectionDraw { hard: true, ..soft.clone() };
        let mut a = case.model.clone();
        let mut b = case.model.clone();
        let la = a.forward_backward(&batch, &case.weights.with_sparse(0.0), &soft).unwrap();
        let lb = b.forward_backward(&batch, &case.weights.with_sparse(0.0), &hard).unwrap();
        assert!((la.total - lb.total).abs() < 1e-9);
        for g in [Group::RuleWeight, Group::ClassBias, Group::Negation] {
            for (x, y) in a.params.grad(g).iter().zip(b.params.grad(g)) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
