//! Hand-built models encoding known rules.
//!
//! Used as references: a model that reads facts straight off the generator's
//! embedding and applies the ground-truth rules reaches the Bayes oracle in
//! the noise-free regime, and gives counterfactual and service tests a model
//! with known behaviour.

use crate::error::{Error, Result};
use crate::logic::LogicConfig;
use crate::model::LogicModel;
use crate::numeric::params::{Dims, Group};
use crate::scalar::Real;
use crate::scenario::Generator;

/// A conjunction voting for one class with a fixed weight.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleTemplate {
    pub positive: Vec<usize>,
    pub negated: Vec<usize>,
    pub class: usize,
    pub weight: f64,
}

/// Selection logit margin and negation pre-gate magnitude of encoded slots.
pub const SATURATION: f64 = 40.0;

/// Writes `templates` into the reasoning parameters of `model`.
///
/// Each slot gets a one-hot selection (logit margin [`SATURATION`]) and a
/// saturated gate. Rules shorter than `L` repeat their first literal, which
/// is idempotent on binary facts. Unused rules get zero weight.
pub fn encode_rules<T: Real>(model: &mut LogicModel<T>, templates: &[RuleTemplate], class_bias: &[f64]) -> Result<()> {
    let Dims {
        facts: n,
        rules: m_rules,
        slots: l_slots,
        classes,
        ..
    } = model.dims;
    if templates.len() > m_rules {
        return Err(Error::Config(format!("{} rules do not fit in {m_rules}", templates.len())));
    }
    if class_bias.len() != classes {
        return Err(Error::shape("class bias", classes, class_bias.len()));
    }
    for t in templates {
        let len = t.positive.len() + t.negated.len();
        if len == 0 || len > l_slots {
            return Err(Error::Config(format!("rule length {len} outside 1..={l_slots}")));
        }
        if t.class >= classes {
            return Err(Error::ClassOutOfRange { index: t.class, classes });
        }
        if t.positive.iter().chain(&t.negated).any(|&i| i >= n) {
            return Err(Error::UnknownFact("template literal".into()));
        }
    }
    let sel = model.params.value_mut(Group::Selection);
    sel.fill(T::zero());
    let neg_len = m_rules * l_slots;
    let mut gates = vec![T::zero(); neg_len];
    for (m, t) in templates.iter().enumerate() {
        let literals: Vec<(usize, bool)> = t
            .positive
            .iter()
            .map(|&i| (i, false))
            .chain(t.negated.iter().map(|&i| (i, true)))
            .collect();
        for j in 0..l_slots {
            let (fact, negated) = literals[j.min(literals.len() - 1)];
            sel[(m * l_slots + j) * n + fact] = T::lit(SATURATION);
            gates[m * l_slots + j] = T::lit(if negated { SATURATION } else { -SATURATION });
        }
    }
    model.params.value_mut(Group::Negation).copy_from_slice(&gates);
    let w = model.params.value_mut(Group::RuleWeight);
    w.fill(T::zero());
    for (m, t) in templates.iter().enumerate() {
        w[t.class * m_rules + m] = T::lit(t.weight);
    }
    for (b, &x) in model.params.value_mut(Group::ClassBias).iter_mut().zip(class_bias) {
        *b = T::lit(x);
    }
    Ok(())
}

/// Fusion head that decodes `z_k = scale * (2 p_k - 1)` from visible views of
/// `generator` and gives visible views reliability `scale` (occluded: 0).
pub fn encode_decoder<T: Real>(model: &mut LogicModel<T>, generator: &Generator, scale: f64) -> Result<()> {
    let n = generator.num_facts();
    let d = generator.config().features;
    if model.dims.facts != n || model.dims.features != d {
        return Err(Error::Config("model and generator disagree on facts or features".into()));
    }
    let e = generator.embedding();
    let cols = 2 * n;
    let g2 = generator.config().feature_gain.powi(2);
    let mut wp = vec![T::zero(); n * d];
    let mut wr = vec![T::zero(); n * d];
    for k in 0..n {
        for i in 0..d {
            let pk = e[i * cols + k];
            let mk = e[i * cols + n + k];
            wp[k * d + i] = T::lit(scale * (2.0 * pk - mk) / g2);
            wr[k * d + i] = T::lit(scale * mk / g2);
        }
    }
    model.params.value_mut(Group::PredWeight).copy_from_slice(&wp);
    model.params.value_mut(Group::RelWeight).copy_from_slice(&wr);
    model.params.value_mut(Group::PredBias).fill(T::zero());
    model.params.value_mut(Group::RelBias).fill(T::zero());
    Ok(())
}

/// Ground-truth rules as templates. Weights grow with priority so a
/// higher-priority rule outvotes any lower one; the default class gets a
/// small bias so it wins when nothing fires.
pub fn ground_truth_templates(generator: &Generator) -> (Vec<RuleTemplate>, Vec<f64>) {
    let mut priorities: Vec<i32> = generator.rules().iter().map(|r| r.priority).collect();
    priorities.sort_unstable();
    priorities.dedup();
    let templates = generator
        .rules()
        .iter()
        .map(|r| {
            let rank = priorities.binary_search(&r.priority).expect("listed") + 1;
            RuleTemplate {
                positive: r.positive.clone(),
                negated: r.negated.clone(),
                class: r.class,
                weight: 8.0 * rank as f64,
            }
        })
        .collect();
    let mut bias = vec![0.0; generator.num_classes()];
    bias[generator.default_class()] = 4.0;
    (templates, bias)
}

/// Model that applies the generator's own rules to decoded facts.
pub fn oracle_model<T: Real>(generator: &Generator, logic: LogicConfig) -> Result<LogicModel<T>> {
    let dims = Dims {
        facts: generator.num_facts(),
        features: generator.config().features,
        rules: logic.rules,
        slots: logic.slots,
        classes: generator.num_classes(),
    };
    let mut model = LogicModel::zeros(dims, logic)?;
    encode_decoder(&mut model, generator, 30.0)?;
    let (templates, bias) = ground_truth_templates(generator);
    encode_rules(&mut model, &templates, &bias)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::GeneratorConfig;

    #[test]
    fn oracle_is_exact_without_noise_or_occlusion() {
        let g = GeneratorConfig::clinic8()
            .with_noise(0.0)
            .with_occlusion(0.0)
            .compile()
            .unwrap();
        let model: LogicModel<f64> = oracle_model(&g, LogicConfig::default()).unwrap();
        for s in g.generate(2000) {
            let inf = model.infer(&s.views).unwrap();
            assert_eq!(inf.predicted, s.label, "facts {:?}", s.facts);
            for (c, &p) in inf.graph.confidences.iter().zip(&s.facts) {
                assert!((c - f64::from(p)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn oracle_matches_label_function_on_every_assignment() {
        let g = GeneratorConfig::clinic8().compile().unwrap();
        let model: LogicModel<f64> = oracle_model(&g, LogicConfig::default()).unwrap();
        for code in 0u32..256 {
            let bits: Vec<u8> = (0..8).map(|i| ((code >> i) & 1) as u8).collect();
            let c: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
            assert_eq!(model.infer_facts(&c).unwrap().predicted, g.label(&bits));
        }
    }

    #[test]
    fn occluded_views_get_low_reliability() {
        let g = GeneratorConfig::clinic8().with_noise(0.0).with_occlusion(0.5).compile().unwrap();
        let model: LogicModel<f64> = oracle_model(&g, LogicConfig::default()).unwrap();
        for s in g.generate(100) {
            let graph = model.fact_graph(&s.views).unwrap();
            for k in 0..g.num_facts() {
                let row = graph.attribution_row(k);
                for (v, mask) in s.masks.iter().enumerate() {
                    if mask[k] == 0 {
                        assert!(row[v] < 1e-9);
                    }
                }
                assert!((graph.confidences[k] - f64::from(s.facts[k])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn template_validation() {
        let g = GeneratorConfig::clinic8().compile().unwrap();
        let mut model: LogicModel<f64> = oracle_model(&g, LogicConfig::default()).unwrap();
        let too_long = RuleTemplate {
            positive: vec![0, 1, 2, 3, 4],
            negated: vec![],
            class: 0,
            weight: 1.0,
        };
        assert!(encode_rules(&mut model, &[too_long], &[0.0; 4]).is_err());
        let bad_class = RuleTemplate {
            positive: vec![0],
            negated: vec![],
            class: 9,
            weight: 1.0,
        };
        assert!(encode_rules(&mut model, &[bad_class], &[0.0; 4]).is_err());
    }
}
