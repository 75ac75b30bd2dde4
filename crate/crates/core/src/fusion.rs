//! Multi-view fact fusion.
//!
//! Each view is scored by two affine heads shared across views: a fact-logit
//! head `z` and a reliability head `rho`. Per fact, the reliabilities are
//! normalised into view attribution weights and the logits are pooled with
//! those weights before the sigmoid, giving the fact confidence vector `c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ops::{max, sigmoid};
use crate::numeric::params::{Group, ParamStore};
use crate::scalar::Real;

/// How per-view logits are pooled into one fact logit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Reliability-weighted attribution (the default).
    #[default]
    Reliability,
    /// Attribution forced uniform; the reliability head is ignored.
    Uniform,
}

/// Borrowed view of the two affine heads.
#[derive(Clone, Copy, Debug)]
pub struct FusionHead<'a, T> {
    pub facts: usize,
    pub features: usize,
    pub pred_weight: &'a [T],
    pub pred_bias: &'a [T],
    pub rel_weight: &'a [T],
    pub rel_bias: &'a [T],
}

impl<'a, T: Real> FusionHead<'a, T> {
    pub fn from_params(params: &'a ParamStore<T>) -> Self {
        let shape = &params.get(Group::PredWeight).shape;
        Self {
            facts: shape[0],
            features: shape[1],
            pred_weight: params.value(Group::PredWeight),
            pred_bias: params.value(Group::PredBias),
            rel_weight: params.value(Group::RelWeight),
            rel_bias: params.value(Group::RelBias),
        }
    }
}

/// Probabilistic fact graph: fused confidences plus the intermediates that
/// produced them. Matrices are row-major `N x V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FactGraph<T> {
    pub views: usize,
    pub confidences: Vec<T>,
    pub attribution: Vec<T>,
    pub logits: Vec<T>,
    pub reliabilities: Vec<T>,
}

impl<T: Real> FactGraph<T> {
    pub fn facts(&self) -> usize {
        self.confidences.len()
    }

    pub fn attribution_row(&self, fact: usize) -> &[T] {
        &self.attribution[fact * self.views..(fact + 1) * self.views]
    }

    /// A graph that carries confidences only, for callers that bypass fusion.
    pub fn from_confidences(confidences: Vec<T>) -> Self {
        let n = confidences.len();
        Self {
            views: 1,
            attribution: vec![T::one(); n],
            logits: confidences
                .iter()
                .map(|&c| (c / (T::one() - c)).ln())
                .collect(),
            reliabilities: vec![T::zero(); n],
            confidences,
        }
    }
}

/// Applies both heads to one view's features.
pub fn predict_view<T: Real>(features: &[T], head: &FusionHead<'_, T>) -> Result<(Vec<T>, Vec<T>)> {
    if features.len() != head.features {
        return Err(Error::shape("view features", head.features, features.len()));
    }
    let d = head.features;
    let affine = |w: &[T], b: &[T]| -> Vec<T> {
        (0..head.facts)
            .map(|k| {
                let row = &w[k * d..(k + 1) * d];
                row.iter()
                    .zip(features)
                    .fold(b[k], |acc, (&a, &x)| acc + a * x)
            })
            .collect()
    };
    Ok((
        affine(head.pred_weight, head.pred_bias),
        affine(head.rel_weight, head.rel_bias),
    ))
}

/// `exp(rho_v) / (sum_u exp(rho_u) + eps)`, computed after shifting by the
/// maximum; `eps` is added to the shifted denominator, so `eps = 0` is softmax.
pub fn view_attribution<T: Real>(rho: &[T], eps: T) -> Vec<T> {
    let mut out = vec![T::zero(); rho.len()];
    view_attribution_into(rho, eps, &mut out);
    out
}

pub(crate) fn view_attribution_into<T: Real>(rho: &[T], eps: T, out: &mut [T]) -> T {
    let m = max(rho);
    let mut denom = eps;
    for (o, &r) in out.iter_mut().zip(rho) {
        *o = (r - m).exp();
        denom += *o;
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
    denom
}

/// Backward of [`view_attribution`]: given `a` and `g = dL/da`, writes
/// `dL/drho`. The `eps` term makes the row depend on which entry is the max.
pub(crate) fn view_attribution_backward<T: Real>(
    rho: &[T],
    a: &[T],
    denom: T,
    eps: T,
    g: &[T],
    out: &mut [T],
) {
    let ga: T = a.iter().zip(g).map(|(&x, &y)| x * y).sum();
    let arg = crate::numeric::ops::argmax(rho);
    for u in 0..rho.len() {
        out[u] = a[u] * (g[u] - ga);
    }
    if eps > T::zero() {
        out[arg] -= eps / denom * ga;
    }
}

/// Weighted logit pooling: `sigmoid(sum_v w_v z_v)`.
pub fn fuse<T: Real>(z: &[T], weights: &[T]) -> T {
    sigmoid(z.iter().zip(weights).map(|(&a, &b)| a * b).sum())
}

/// Runs both heads on every view, then attributes and fuses per fact.
pub fn build_fact_graph<T: Real>(
    views: &[Vec<T>],
    head: &FusionHead<'_, T>,
    eps: T,
    pooling: Pooling,
) -> Result<FactGraph<T>> {
    if views.is_empty() {
        return Err(Error::Config("at least one view is required".into()));
    }
    let v_count = views.len();
    let n = head.facts;
    let mut logits = vec![T::zero(); n * v_count];
    let mut reliabilities = vec![T::zero(); n * v_count];
    for (v, x) in views.iter().enumerate() {
        let (z, rho) = predict_view(x, head)?;
        for k in 0..n {
            logits[k * v_count + v] = z[k];
            reliabilities[k * v_count + v] = rho[k];
        }
    }
    let mut attribution = vec![T::zero(); n * v_count];
    let mut confidences = Vec::with_capacity(n);
    let uniform = T::one() / T::lit(v_count as f64);
    for k in 0..n {
        let row = k * v_count..(k + 1) * v_count;
        match pooling {
            Pooling::Reliability => {
                view_attribution_into(&reliabilities[row.clone()], eps, &mut attribution[row.clone()]);
            }
            Pooling::Uniform => attribution[row.clone()].fill(uniform),
        }
        confidences.push(fuse(&logits[row.clone()], &attribution[row]));
    }
    Ok(FactGraph {
        views: v_count,
        confidences,
        attribution,
        logits,
        reliabilities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::params::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(seed: u64, n: usize, d: usize) -> ParamStore<f64> {
        let dims = Dims {
            facts: n,
            features: d,
            rules: 1,
            slots: 1,
            classes: 1,
        };
        let mut p = ParamStore::zeros(&dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for g in [Group::PredWeight, Group::PredBias, Group::RelWeight, Group::RelBias] {
            for x in p.value_mut(g) {
                *x = rng.random_range(-1.0..1.0);
            }
        }
        p
    }

    #[test]
    fn zero_head_gives_zero_outputs() {
        let p = ParamStore::<f64>::zeros(&Dims {
            facts: 3,
            features: 4,
            rules: 1,
            slots: 1,
            classes: 1,
        });
        let head = FusionHead::from_params(&p);
        let (z, rho) = predict_view(&[1.0, -2.0, 0.5, 3.0], &head).unwrap();
        assert_eq!(z, vec![0.0; 3]);
        assert_eq!(rho, vec![0.0; 3]);
    }

    #[test]
    fn identity_head_reads_basis_vector() {
        let n = 4;
        let mut p = ParamStore::<f64>::zeros(&Dims {
            facts: n,
            features: n,
            rules: 1,
            slots: 1,
            classes: 1,
        });
        for k in 0..n {
            p.value_mut(Group::PredWeight)[k * n + k] = 1.0;
        }
        let head = FusionHead::from_params(&p);
        let mut e2 = vec![0.0; n];
        e2[2] = 1.0;
        let (z, _) = predict_view(&e2, &head).unwrap();
        assert_eq!(z, e2);
    }

    #[test]
    fn predict_view_matches_matmul_oracle() {
        let (n, d) = (5, 7);
        let p = random_params(11, n, d);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let head = FusionHead::from_params(&p);
        let (z, rho) = predict_view(&x, &head).unwrap();
        let w = p.value(Group::PredWeight);
        let r = p.value(Group::RelWeight);
        for k in 0..n {
            let mut zk = p.value(Group::PredBias)[k];
            let mut rk = p.value(Group::RelBias)[k];
            for j in 0..d {
                zk += w[k * d + j] * x[j];
                rk += r[k * d + j] * x[j];
            }
            assert_eq!(z[k], zk);
            assert_eq!(rho[k], rk);
        }
    }

    #[test]
    fn predict_view_rejects_wrong_dimension() {
        let p = random_params(1, 2, 3);
        let head = FusionHead::from_params(&p);
        assert!(matches!(predict_view(&[1.0, 2.0], &head), Err(Error::Shape { .. })));
    }

    #[test]
    fn attribution_examples() {
        let a = view_attribution(&[0.0f64, 0.0, 0.0], 0.0);
        assert!(a.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let a = view_attribution(&[3.0f64.ln(), 0.0], 0.0);
        assert!((a[0] - 0.75).abs() < 1e-15 && (a[1] - 0.25).abs() < 1e-15);
        assert_eq!(view_attribution(&[-4.2f64], 0.0), vec![1.0]);
        let a = view_attribution(&[0.3f64, -0.1], 1e-8);
        let s: f64 = a.iter().sum();
        assert!(s <= 1.0 && s > 1.0 - 1e-8);
    }

    #[test]
    fn fuse_examples() {
        assert_eq!(fuse(&[2.0f64, -2.0], &[0.5, 0.5]), 0.5);
        assert!((fuse(&[4.0f64], &[1.0]) - 0.982_013_790_037_908_4).abs() < 1e-12);
        assert!((fuse(&[1.5f64, -100.0], &[1.0, 0.0]) - 0.817_574_476_193_643_7).abs() < 1e-12);
    }

    #[test]
    fn single_view_reduces_to_sigmoid() {
        let p = random_params(3, 4, 5);
        let head = FusionHead::from_params(&p);
        let x = vec![0.2, -0.4, 1.0, 0.0, 0.7];
        let g = build_fact_graph(&[x.clone()], &head, 0.0, Pooling::Reliability).unwrap();
        let (z, _) = predict_view(&x, &head).unwrap();
        for k in 0..4 {
            assert_eq!(g.attribution_row(k), &[1.0]);
            assert_eq!(g.confidences[k], sigmoid(z[k]));
        }
    }

    #[test]
    fn duplicated_views_match_single_view() {
        let p = random_params(5, 4, 5);
        let head = FusionHead::from_params(&p);
        let x = vec![0.9, -0.4, 0.1, 0.3, -0.7];
        let one = build_fact_graph(&[x.clone()], &head, 0.0, Pooling::Reliability).unwrap();
        let two = build_fact_graph(&[x.clone(), x], &head, 0.0, Pooling::Reliability).unwrap();
        for k in 0..4 {
            assert!((one.confidences[k] - two.confidences[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn graph_matches_composition_of_sub_ops() {
        let (n, d, v) = (6, 4, 3);
        let p = random_params(8, n, d);
        let head = FusionHead::from_params(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let views: Vec<Vec<f64>> = (0..v)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let g = build_fact_graph(&views, &head, 1e-8, Pooling::Reliability).unwrap();
        let per_view: Vec<_> = views.iter().map(|x| predict_view(x, &head).unwrap()).collect();
        for k in 0..n {
            let z: Vec<f64> = per_view.iter().map(|(z, _)| z[k]).collect();
            let rho: Vec<f64> = per_view.iter().map(|(_, r)| r[k]).collect();
            let w = view_attribution(&rho, 1e-8);
            assert_eq!(g.attribution_row(k), w.as_slice());
            assert_eq!(g.confidences[k], fuse(&z, &w));
            let s: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum();
            assert!((g.confidences[k] - sigmoid(s)).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_pooling_ignores_reliability() {
        let p = random_params(2, 3, 2);
        let head = FusionHead::from_params(&p);
        let views = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let g = build_fact_graph(&views, &head, 1e-8, Pooling::Uniform).unwrap();
        assert!(g.attribution.iter().all(|&a| a == 0.5));
    }

    #[test]
    fn works_in_single_precision() {
        let a = view_attribution(&[3.0f32.ln(), 0.0], 0.0);
        assert!((a[0] - 0.75).abs() < 1e-6);
        assert!((fuse(&[4.0f32], &[1.0]) - 0.982_013_8).abs() < 1e-6);
    }
}
