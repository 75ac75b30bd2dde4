//! Algebraic invariants of fusion and reasoning over random inputs.

use factlogic::fusion::view_attribution;
use factlogic::logic::{literal_truth, rule_strength, LogicConfig};
use factlogic::model::{InitConfig, LogicModel};
use factlogic::numeric::ops::softmax;
use factlogic::numeric::params::{Dims, Group};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(rng: &mut ChaCha8Rng, dims: Dims) -> LogicModel<f64> {
    let logic = LogicConfig {
        rules: dims.rules,
        slots: dims.slots,
        ..LogicConfig::default()
    };
    let init = InitConfig {
        negation_scale: 4.0,
        ..InitConfig::default()
    };
    LogicModel::init(dims, logic, &init, rng).unwrap()
}

fn random_views(rng: &mut ChaCha8Rng, views: usize, features: usize) -> Vec<Vec<f64>> {
    (0..views)
        .map(|_| (0..features).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect()
}

fn dims(rng: &mut ChaCha8Rng) -> Dims {
    Dims {
        facts: rng.random_range(1..=8),
        features: rng.random_range(1..=6),
        rules: rng.random_range(1..=4),
        slots: rng.random_range(1..=3),
        classes: rng.random_range(2..=4),
    }
}

#[test]
fn attribution_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let d = dims(&mut rng);
        let mut model = random_model(&mut rng, d);
        // reliability logits spread over a wide range
        for w in model.params.value_mut(Group::RelWeight) {
            *w *= 20.0;
        }
        let count = rng.random_range(1..=3);
        let views = random_views(&mut rng, count, d.features);
        model.attribution_eps = 0.0;
        let graph = model.fact_graph(&views).unwrap();
        for k in 0..d.facts {
            let sum: f64 = graph.attribution_row(k).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9, "row {k} sums to {sum}");
        }
        model.attribution_eps = 1e-8;
        let graph = model.fact_graph(&views).unwrap();
        for k in 0..d.facts {
            let sum: f64 = graph.attribution_row(k).iter().sum();
            assert!(sum <= 1.0 + 1e-12 && sum > 1.0 - 1e-8 - 1e-12, "row {k} sums to {sum}");
        }
    }
}

#[test]
fn attribution_examples() {
    let a = view_attribution(&[0.0f64, 0.0, 0.0], 0.0);
    assert!(a.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    let a = view_attribution(&[3.0f64.ln(), 0.0], 0.0);
    assert!((a[0] - 0.75).abs() < 1e-15 && (a[1] - 0.25).abs() < 1e-15);
    assert_eq!(view_attribution(&[17.5f64], 0.0), vec![1.0]);
}

#[test]
fn truths_and_strengths_stay_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0usize;
    while checked < 100_000 {
        let n = rng.random_range(1..=8);
        let slots = rng.random_range(1..=4);
        let scale = [0.1, 1.0, 10.0, 60.0][rng.random_range(0..4)];
        let mut truths = Vec::with_capacity(slots);
        for _ in 0..slots {
            let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
            let gamma = softmax(&logits);
            let eta = match rng.random_range(0..5) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random::<f64>(),
            };
            let c: Vec<f64> = (0..n)
                .map(|_| match rng.random_range(0..4) {
                    0 => 0.0,
                    1 => 1.0,
                    _ => rng.random::<f64>(),
                })
                .collect();
            let mu = literal_truth(&gamma, eta, &c);
            assert!((0.0..=1.0).contains(&mu), "mu = {mu}");
            truths.push(mu);
            checked += 1;
        }
        let tau = rule_strength(&truths);
        assert!((0.0..=1.0).contains(&tau), "tau = {tau}");
    }
}

#[test]
fn model_strengths_stay_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let d = dims(&mut rng);
        let model = random_model(&mut rng, d);
        let views = random_views(&mut rng, 3, d.features);
        let inference = model.infer(&views).unwrap();
        let a = &inference.activation;
        assert!(a.truths.iter().chain(&a.strengths).all(|x| (0.0..=1.0).contains(x)));
        assert!(inference.graph.confidences.iter().all(|x| (0.0..=1.0).contains(x)));
        let total: f64 = inference.posterior.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn neutral_gates_give_half_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let d = dims(&mut rng);
        let mut model = random_model(&mut rng, d);
        model.params.value_mut(Group::Negation).fill(0.0);
        let views = random_views(&mut rng, 2, d.features);
        let inference = model.infer(&views).unwrap();
        assert!(inference.activation.truths.iter().all(|&mu| mu == 0.5));
    }
}

#[test]
fn product_tnorm_annihilator_and_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let len = rng.random_range(1..=5);
        let xs: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
        let mut with_zero = xs.clone();
        with_zero.insert(rng.random_range(0..=len), 0.0);
        assert_eq!(rule_strength(&with_zero), 0.0);
        let mut with_one = xs.clone();
        with_one.insert(rng.random_range(0..=len), 1.0);
        assert_eq!(rule_strength(&with_one), rule_strength(&xs));
    }
    assert_eq!(rule_strength::<f64>(&[]), 1.0);
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant(xs in prop::collection::vec(-30.0f64..30.0, 1..8), shift in -500.0f64..500.0) {
        let p = softmax(&xs);
        let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        let q = softmax(&shifted);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn neutral_gate_is_exact(logits in prop::collection::vec(-20.0f64..20.0, 1..8), seed in any::<u64>()) {
        let gamma = softmax(&logits);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f64> = (0..gamma.len()).map(|_| rng.random::<f64>()).collect();
        prop_assert_eq!(literal_truth(&gamma, 0.5, &c), 0.5);
    }

    #[test]
    fn fusion_is_view_permutation_equivariant(seed in any::<u64>(), views in 2usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dims(&mut rng);
        let model = random_model(&mut rng, d);
        let x = random_views(&mut rng, views, d.features);
        let mut order: Vec<usize> = (0..views).collect();
        order.rotate_left(rng.random_range(1..views));
        order.swap(0, rng.random_range(0..views));
        let permuted: Vec<Vec<f64>> = order.iter().map(|&v| x[v].clone()).collect();
        let a = model.fact_graph(&x).unwrap();
        let b = model.fact_graph(&permuted).unwrap();
        for k in 0..d.facts {
            prop_assert!((a.confidences[k] - b.confidences[k]).abs() < 1e-12);
            for (j, &v) in order.iter().enumerate() {
                prop_assert!((b.attribution_row(k)[j] - a.attribution_row(k)[v]).abs() < 1e-12);
            }
        }
        let pa = model.infer(&x).unwrap().posterior;
        let pb = model.infer(&permuted).unwrap().posterior;
        for (p, q) in pa.iter().zip(&pb) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}
