//! The end-to-end model: fusion heads feeding the rule layer, with a
//! hand-derived backward pass through every stage.
//!
//! Local Jacobians used by [`LogicModel::forward_backward`]:
//!
//! * class softmax + CE: `dL/dscore_y = P_y - [y = y*]`
//! * scores: `dscore_y/dbeta_y = 1`, `dscore_y/dw_ym = tau_m`, `dscore_y/dtau_m = w_ym`
//! * product T-norm: `dtau_m/dmu_j = prod_{i != j} mu_i` (prefix/suffix products)
//! * literal: `mu = u + eta (1 - 2u)`, so `dmu/du = 1 - 2 eta`, `dmu/deta = 1 - 2u`,
//!   with `u = <gamma, c>` and `eta = sigmoid(eta_pre)`
//! * selection: softmax of `(logits + g) / t`, straight-through when hard
//! * fusion: `c = sigmoid(s)`, `s = <a, z>`, `a` the attribution row
//! * heads: affine, so weight gradients are outer products with the features

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{
    build_fact_graph, view_attribution_backward, view_attribution_into, FactGraph, FusionHead,
    Pooling,
};
use crate::logic::{one_hot_argmax, LogicConfig, LogicParams, Reasoner, RuleActivation};
use crate::loss::{bce, bce_grad, l1, selection_sparsity, LossBreakdown, LossWeights, SparsityForm};
use crate::numeric::ops::{log_sum_exp, sigmoid, signum_or_zero, softmax_into};
use crate::numeric::params::{Dims, Group, ParamStore};
use crate::scalar::Real;

/// One training sample as seen by the model.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a, T> {
    pub views: &'a [Vec<T>],
    pub label: usize,
    /// Ground-truth fact bits; `None` when the sample's fact labels are masked.
    pub fact_labels: Option<&'a [T]>,
}

/// Selection noise and temperature shared by every sample of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionDraw<T> {
    pub temperature: f64,
    /// Gumbel noise, `M x L x N`; `None` for deterministic selection.
    pub noise: Option<Vec<T>>,
    pub hard: bool,
}

impl<T: Real> SelectionDraw<T> {
    pub fn deterministic(temperature: f64) -> Self {
        Self {
            temperature,
            noise: None,
            hard: false,
        }
    }

    pub fn cast<U: Real>(&self) -> SelectionDraw<U> {
        SelectionDraw {
            temperature: self.temperature,
            noise: self
                .noise
                .as_ref()
                .map(|n| n.iter().map(|&x| U::lit(x.as_f64())).collect()),
            hard: self.hard,
        }
    }

    pub fn sampled<R: Rng + ?Sized>(dims: &Dims, temperature: f64, hard: bool, rng: &mut R) -> Self {
        Self {
            temperature,
            noise: Some(crate::logic::sample_gumbel(
                dims.rules * dims.slots * dims.facts,
                rng,
            )),
            hard,
        }
    }
}

/// Output of a single inference pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Inference<T> {
    pub graph: FactGraph<T>,
    pub posterior: Vec<T>,
    pub predicted: usize,
    pub activation: RuleActivation<T>,
}

/// Initial parameter scales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    /// Selection logits are drawn from `U(-s, s)`.
    pub selection_scale: f64,
    /// Rule weights are drawn from `U(-s, s)`.
    pub rule_weight_scale: f64,
    /// Negation pre-gates are drawn from `U(-s, s)`; 0 starts every gate at 0.5.
    #[serde(default)]
    pub negation_scale: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            selection_scale: 0.1,
            rule_weight_scale: 0.5,
            negation_scale: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogicModel<T> {
    pub dims: Dims,
    pub logic: LogicConfig,
    pub pooling: Pooling,
    /// `eps` in the attribution denominator.
    pub attribution_eps: f64,
    pub params: ParamStore<T>,
}

impl<T: Real> LogicModel<T> {
    /// All-zero parameters.
    pub fn zeros(dims: Dims, logic: LogicConfig) -> Result<Self> {
        dims.validate()?;
        if logic.rules != dims.rules || logic.slots != dims.slots {
            return Err(Error::Config("logic config disagrees with dims".into()));
        }
        logic.temperature.validate()?;
        Ok(Self {
            dims,
            logic,
            pooling: Pooling::Reliability,
            attribution_eps: 1e-8,
            params: ParamStore::zeros(&dims),
        })
    }

    /// Seeded initialisation. Head weights follow `U(+-1/sqrt(D))`, biases and
    /// negation pre-gates start at 0 (every gate at 0.5).
    pub fn init<R: Rng + ?Sized>(dims: Dims, logic: LogicConfig, init: &InitConfig, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(dims, logic)?;
        let head = 1.0 / (dims.features as f64).sqrt();
        let mut fill = |p: &mut [T], scale: f64| {
            for x in p {
                *x = T::lit(rng.random_range(-scale..=scale));
            }
        };
        fill(model.params.value_mut(Group::PredWeight), head);
        fill(model.params.value_mut(Group::RelWeight), head);
        fill(model.params.value_mut(Group::Selection), init.selection_scale);
        fill(model.params.value_mut(Group::RuleWeight), init.rule_weight_scale);
        if init.negation_scale > 0.0 {
            fill(model.params.value_mut(Group::Negation), init.negation_scale);
        }
        Ok(model)
    }

    pub fn cast<U: Real>(&self) -> LogicModel<U> {
        LogicModel {
            dims: self.dims,
            logic: self.logic,
            pooling: self.pooling,
            attribution_eps: self.attribution_eps,
            params: self.params.cast(),
        }
    }

    pub fn fusion_head(&self) -> FusionHead<'_, T> {
        FusionHead::from_params(&self.params)
    }

    pub fn logic_params(&self) -> LogicParams<'_, T> {
        LogicParams::from_params(&self.dims, &self.params)
    }

    /// Reasoner with deterministic selections as used at evaluation time.
    pub fn eval_reasoner(&self) -> Reasoner<T> {
        Reasoner::deterministic(
            &self.logic_params(),
            self.logic.temperature.end,
            self.logic.eval_hard,
        )
    }

    pub fn fact_graph(&self, views: &[Vec<T>]) -> Result<FactGraph<T>> {
        build_fact_graph(
            views,
            &self.fusion_head(),
            T::lit(self.attribution_eps),
            self.pooling,
        )
    }

    /// Deterministic inference from per-view features.
    pub fn infer(&self, views: &[Vec<T>]) -> Result<Inference<T>> {
        let graph = self.fact_graph(views)?;
        self.infer_graph(graph, &self.eval_reasoner())
    }

    /// Deterministic inference from fact confidences, bypassing fusion.
    pub fn infer_facts(&self, confidences: &[T]) -> Result<Inference<T>> {
        if confidences.len() != self.dims.facts {
            return Err(Error::shape("fact confidences", self.dims.facts, confidences.len()));
        }
        self.infer_graph(
            FactGraph::from_confidences(confidences.to_vec()),
            &self.eval_reasoner(),
        )
    }

    pub fn infer_graph(&self, graph: FactGraph<T>, reasoner: &Reasoner<T>) -> Result<Inference<T>> {
        let activation = reasoner.activation(&graph.confidences);
        let posterior = reasoner.posterior_from_strengths(&activation.strengths);
        if posterior.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("posterior".into()));
        }
        let predicted = crate::numeric::ops::argmax(&posterior);
        Ok(Inference {
            graph,
            posterior,
            predicted,
            activation,
        })
    }

    /// Forward pass over `batch`, writing `d loss / d param` into the gradient
    /// accumulators (previous contents are discarded). The loss is the batch
    /// mean of the per-sample terms plus the sparsity penalty.
    pub fn forward_backward(
        &mut self,
        batch: &[Example<'_, T>],
        weights: &LossWeights<T>,
        draw: &SelectionDraw<T>,
    ) -> Result<LossBreakdown<T>> {
        if batch.is_empty() {
            return Err(Error::Config("batch must not be empty".into()));
        }
        let Dims {
            facts: n,
            features: d,
            rules: m_rules,
            slots: l_slots,
            classes: c_classes,
        } = self.dims;
        let slot_count = m_rules * l_slots;
        if !(draw.temperature > 0.0) {
            return Err(Error::Config("selection temperature must be > 0".into()));
        }
        if let Some(noise) = &draw.noise {
            if noise.len() != slot_count * n {
                return Err(Error::shape("gumbel noise", slot_count * n, noise.len()));
            }
        }
        self.params.zero_grads();
        let temp = T::lit(draw.temperature);
        let eps = T::lit(self.attribution_eps);
        let inv_b = T::one() / T::lit(batch.len() as f64);
        let one = T::one();
        let two = T::lit(2.0);

        // selections, shared across the batch
        let logits = self.params.value(Group::Selection);
        let mut soft = vec![T::zero(); slot_count * n];
        let mut scaled = vec![T::zero(); n];
        for s in 0..slot_count {
            let row = s * n..(s + 1) * n;
            for (i, x) in scaled.iter_mut().enumerate() {
                let g = draw.noise.as_ref().map_or(T::zero(), |g| g[s * n + i]);
                *x = (logits[s * n + i] + g) / temp;
            }
            softmax_into(&scaled, &mut soft[row]);
        }
        let forward_sel = if draw.hard {
            soft.chunks(n).flat_map(one_hot_argmax).collect::<Vec<T>>()
        } else {
            soft.clone()
        };
        let gates: Vec<T> = self.params.value(Group::Negation).iter().map(|&e| sigmoid(e)).collect();
        let w = self.params.value(Group::RuleWeight).to_vec();
        let beta = self.params.value(Group::ClassBias).to_vec();
        let head = self.fusion_head();
        let (wp, bp, wr, br) = (head.pred_weight, head.pred_bias, head.rel_weight, head.rel_bias);

        let mut g_sel = vec![T::zero(); slot_count * n];
        let mut g_gate = vec![T::zero(); slot_count];
        let mut g_w = vec![T::zero(); c_classes * m_rules];
        let mut g_beta = vec![T::zero(); c_classes];
        let mut g_wp = vec![T::zero(); n * d];
        let mut g_bp = vec![T::zero(); n];
        let mut g_wr = vec![T::zero(); n * d];
        let mut g_br = vec![T::zero(); n];

        let mut ce_sum = T::zero();
        let mut fact_sum = T::zero();
        let mut any_fact = false;

        let mut u = vec![T::zero(); slot_count];
        let mut mu = vec![T::zero(); slot_count];
        let mut tau = vec![T::zero(); m_rules];
        let mut scores = vec![T::zero(); c_classes];
        let mut dc = vec![T::zero(); n];
        let mut prefix = vec![T::zero(); l_slots + 1];
        let mut suffix = vec![T::zero(); l_slots + 1];

        for ex in batch {
            let v_count = ex.views.len();
            if v_count == 0 {
                return Err(Error::Config("sample has no views".into()));
            }
            if ex.label >= c_classes {
                return Err(Error::ClassOutOfRange {
                    index: ex.label,
                    classes: c_classes,
                });
            }
            if let Some(p) = ex.fact_labels {
                if p.len() != n {
                    return Err(Error::shape("fact labels", n, p.len()));
                }
            }
            // fusion forward
            let mut z = vec![T::zero(); n * v_count];
            let mut rho = vec![T::zero(); n * v_count];
            for (v, x) in ex.views.iter().enumerate() {
                if x.len() != d {
                    return Err(Error::shape("view features", d, x.len()));
                }
                for k in 0..n {
                    let row = k * d..(k + 1) * d;
                    let mut zk = bp[k];
                    let mut rk = br[k];
                    for ((&a, &b), &xi) in wp[row.clone()].iter().zip(&wr[row]).zip(x) {
                        zk += a * xi;
                        rk += b * xi;
                    }
                    z[k * v_count + v] = zk;
                    rho[k * v_count + v] = rk;
                }
            }
            let mut attr = vec![T::zero(); n * v_count];
            let mut denom = vec![T::one(); n];
            let mut c = vec![T::zero(); n];
            let uniform = one / T::lit(v_count as f64);
            for k in 0..n {
                let row = k * v_count..(k + 1) * v_count;
                match self.pooling {
                    Pooling::Reliability => {
                        denom[k] = view_attribution_into(&rho[row.clone()], eps, &mut attr[row.clone()]);
                    }
                    Pooling::Uniform => attr[row.clone()].fill(uniform),
                }
                let s: T = attr[row.clone()].iter().zip(&z[row]).map(|(&a, &b)| a * b).sum();
                c[k] = sigmoid(s);
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("fact confidences".into()));
            }

            // logic forward
            for s in 0..slot_count {
                let sel = &forward_sel[s * n..(s + 1) * n];
                u[s] = sel.iter().zip(&c).map(|(&a, &b)| a * b).sum();
                // clamp absorbs rounding only (see `literal_truth`)
                mu[s] = (u[s] + gates[s] * (one - two * u[s])).max(T::zero()).min(one);
            }
            for (m, t) in tau.iter_mut().enumerate() {
                *t = mu[m * l_slots..(m + 1) * l_slots].iter().fold(one, |a, &b| a * b);
            }
            for (y, sc) in scores.iter_mut().enumerate() {
                *sc = beta[y]
                    + w[y * m_rules..(y + 1) * m_rules]
                        .iter()
                        .zip(&tau)
                        .map(|(&a, &b)| a * b)
                        .sum::<T>();
            }
            let lse = log_sum_exp(&scores);
            ce_sum += lse - scores[ex.label];
            if !ce_sum.is_finite() {
                return Err(Error::NonFinite("class scores".into()));
            }

            // classification backward
            let mut dtau = vec![T::zero(); m_rules];
            for y in 0..c_classes {
                let p = (scores[y] - lse).exp();
                let target = if y == ex.label { one } else { T::zero() };
                let ds = weights.ce * inv_b * (p - target);
                g_beta[y] += ds;
                for m in 0..m_rules {
                    g_w[y * m_rules + m] += ds * tau[m];
                    dtau[m] += ds * w[y * m_rules + m];
                }
            }
            dc.fill(T::zero());
            for m in 0..m_rules {
                let base = m * l_slots;
                prefix[0] = one;
                for j in 0..l_slots {
                    prefix[j + 1] = prefix[j] * mu[base + j];
                }
                suffix[l_slots] = one;
                for j in (0..l_slots).rev() {
                    suffix[j] = suffix[j + 1] * mu[base + j];
                }
                for j in 0..l_slots {
                    let s = base + j;
                    let dmu = dtau[m] * prefix[j] * suffix[j + 1];
                    let du = dmu * (one - two * gates[s]);
                    g_gate[s] += dmu * (one - two * u[s]);
                    let sel = &forward_sel[s * n..(s + 1) * n];
                    let gs = &mut g_sel[s * n..(s + 1) * n];
                    for k in 0..n {
                        gs[k] += du * c[k];
                        dc[k] += du * sel[k];
                    }
                }
            }

            // fact grounding
            if let Some(p) = ex.fact_labels {
                any_fact = true;
                for k in 0..n {
                    fact_sum += bce(c[k], p[k], weights.clip);
                    dc[k] += weights.fact * inv_b * bce_grad(c[k], p[k], weights.clip);
                }
            }

            // fusion backward
            let mut g_attr = vec![T::zero(); v_count];
            let mut g_rho = vec![T::zero(); v_count];
            for k in 0..n {
                let ds = dc[k] * c[k] * (one - c[k]);
                if ds == T::zero() {
                    continue;
                }
                let row = k * v_count..(k + 1) * v_count;
                for v in 0..v_count {
                    g_attr[v] = ds * z[k * v_count + v];
                }
                if self.pooling == Pooling::Reliability {
                    view_attribution_backward(
                        &rho[row.clone()],
                        &attr[row.clone()],
                        denom[k],
                        eps,
                        &g_attr,
                        &mut g_rho,
                    );
                } else {
                    g_rho.fill(T::zero());
                }
                for (v, x) in ex.views.iter().enumerate() {
                    let dz = ds * attr[k * v_count + v];
                    let dr = g_rho[v];
                    g_bp[k] += dz;
                    g_br[k] += dr;
                    let wrow = k * d..(k + 1) * d;
                    for ((gp, gr), &xi) in g_wp[wrow.clone()].iter_mut().zip(&mut g_wr[wrow]).zip(x) {
                        *gp += dz * xi;
                        *gr += dr * xi;
                    }
                }
            }
        }

        // sparsity on selections and rule weights
        let lambda = weights.sparse;
        let sel_sparsity = selection_sparsity(&soft, n, weights.sparsity_form);
        let w_l1 = l1(&w);
        if lambda != T::zero() {
            for (gs, &p) in g_sel.iter_mut().zip(&soft) {
                *gs += lambda
                    * match weights.sparsity_form {
                        SparsityForm::Entropy if p > T::zero() => -(p.ln() + one),
                        SparsityForm::Entropy => T::zero(),
                        SparsityForm::L1 => one,
                    };
            }
            for (g, &x) in g_w.iter_mut().zip(&w) {
                *g += lambda * signum_or_zero(x);
            }
        }

        // through the selection softmax (straight-through when hard)
        {
            let out = &mut self.params.get_mut(Group::Selection).grad;
            for s in 0..slot_count {
                let row = s * n..(s + 1) * n;
                let p = &soft[row.clone()];
                let g = &g_sel[row.clone()];
                let dot: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
                for (o, (&pi, &gi)) in out[row].iter_mut().zip(p.iter().zip(g)) {
                    *o = pi * (gi - dot) / temp;
                }
            }
        }
        {
            let out = &mut self.params.get_mut(Group::Negation).grad;
            for s in 0..slot_count {
                out[s] = g_gate[s] * gates[s] * (one - gates[s]);
            }
        }
        self.params.get_mut(Group::RuleWeight).grad = g_w;
        self.params.get_mut(Group::ClassBias).grad = g_beta;
        self.params.get_mut(Group::PredWeight).grad = g_wp;
        self.params.get_mut(Group::PredBias).grad = g_bp;
        self.params.get_mut(Group::RelWeight).grad = g_wr;
        self.params.get_mut(Group::RelBias).grad = g_br;

        let ce = weights.ce * ce_sum * inv_b;
        let fact = any_fact.then(|| weights.fact * fact_sum * inv_b);
        let sparsity = lambda * (sel_sparsity + w_l1);
        let mut out = LossBreakdown {
            total: T::zero(),
            ce,
            fact,
            sparsity,
            calibration: None,
        };
        out.total = out.component_sum();
        if !out.total.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        self.params.check_finite_grads()?;
        Ok(out)
    }

    /// Loss only; gradients are left untouched.
    pub fn loss(
        &self,
        batch: &[Example<'_, T>],
        weights: &LossWeights<T>,
        draw: &SelectionDraw<T>,
    ) -> Result<LossBreakdown<T>> {
        let mut scratch = self.clone();
        scratch.forward_backward(batch, weights, draw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(classes: usize) -> LogicModel<f64> {
        let dims = Dims {
            facts: 5,
            features: 3,
            rules: 2,
            slots: 2,
            classes,
        };
        let logic = LogicConfig {
            rules: 2,
            slots: 2,
            ..Default::default()
        };
        LogicModel::init(dims, logic, &InitConfig::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn uniform_posterior_gives_ln_c() {
        let mut model = toy(4);
        model.params.value_mut(Group::RuleWeight).fill(0.0);
        let views = vec![vec![0.1, 0.2, 0.3], vec![0.0, -1.0, 0.5]];
        let batch = [
            Example { views: &views, label: 0, fact_labels: None },
            Example { views: &views, label: 3, fact_labels: None },
        ];
        let out = model
            .forward_backward(&batch, &LossWeights::default(), &SelectionDraw::deterministic(1.0))
            .unwrap();
        assert!((out.ce - 4f64.ln()).abs() < 1e-14);
        assert_eq!(out.fact, None);
    }

    #[test]
    fn perfect_prediction_has_zero_ce_gradient() {
        let mut model = toy(2);
        model.params.value_mut(Group::RuleWeight).fill(0.0);
        model.params.value_mut(Group::ClassBias).copy_from_slice(&[800.0, -800.0]);
        let views = vec![vec![0.1, 0.2, 0.3]];
        let batch = [Example { views: &views, label: 0, fact_labels: None }];
        let out = model
            .forward_backward(&batch, &LossWeights::zero().with_ce(1.0), &SelectionDraw::deterministic(1.0))
            .unwrap();
        assert_eq!(out.total, 0.0);
        assert!(model.params.iter().all(|(_, p)| p.grad.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut model = toy(2);
        let views = vec![vec![0.1, 0.2]];
        let batch = [Example { views: &views, label: 0, fact_labels: None }];
        let err = model
            .forward_backward(&batch, &LossWeights::default(), &SelectionDraw::deterministic(1.0))
            .unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
        let views = vec![vec![0.1, 0.2, 0.3]];
        let batch = [Example { views: &views, label: 5, fact_labels: None }];
        assert!(model
            .forward_backward(&batch, &LossWeights::default(), &SelectionDraw::deterministic(1.0))
            .is_err());
    }

    #[test]
    fn non_finite_input_is_reported() {
        let mut model = toy(2);
        let views = vec![vec![f64::NAN, 0.2, 0.3]];
        let batch = [Example { views: &views, label: 0, fact_labels: None }];
        let err = model
            .forward_backward(&batch, &LossWeights::default(), &SelectionDraw::deterministic(1.0))
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn infer_matches_training_forward_in_deterministic_mode() {
        let mut model = toy(3);
        model.logic.eval_hard = false;
        let views = vec![vec![0.4, -0.2, 0.9], vec![0.3, 0.3, -0.1]];
        let inf = model.infer(&views).unwrap();
        let draw = SelectionDraw::deterministic(model.logic.temperature.end);
        let batch = [Example { views: &views, label: 1, fact_labels: None }];
        let out = model.forward_backward(&batch, &LossWeights::default(), &draw).unwrap();
        assert!((out.ce + inf.posterior[1].ln()).abs() < 1e-12);
    }
}
