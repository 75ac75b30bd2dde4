//! Symbolic rules read off a trained model.
//!
//! [`discretize`] thresholds the positive and negated mass of every slot,
//! `a+ = gamma * (1 - eta)` and `a- = gamma * eta`, into literal sets.
//! [`prune`] keeps rules that are long enough, fire on their own class and
//! actually move the class scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logic::Reasoner;
use crate::model::LogicModel;
use crate::numeric::ops::argmax;
use crate::scalar::Real;
use crate::vocab::Vocabulary;

/// One conjunction with its class weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolicRule {
    /// Index of the rule in the model.
    pub index: usize,
    /// Positive literals, ascending fact index.
    pub positive: Vec<usize>,
    /// Negated literals, ascending fact index.
    pub negated: Vec<usize>,
    /// Column `w[., index]`.
    pub weights: Vec<f64>,
    /// Mean firing on validation samples of the top class; set by [`prune`].
    pub reliability: Option<f64>,
}

impl SymbolicRule {
    pub fn len(&self) -> usize {
        self.positive.len() + self.negated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A fact required both true and false: the rule can never fire.
    pub fn is_contradictory(&self) -> bool {
        self.positive.iter().any(|p| self.negated.contains(p))
    }

    pub fn top_class(&self) -> usize {
        argmax(&self.weights)
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lead of the top class weight over the runner-up: how strongly the rule
    /// votes for its class. Purely inhibitory rules score about 0.
    pub fn vote_margin(&self) -> f64 {
        let top = self.top_class();
        let second = self
            .weights
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != top)
            .map(|(_, &w)| w)
            .fold(f64::NEG_INFINITY, f64::max);
        if second.is_finite() {
            self.max_weight() - second
        } else {
            self.max_weight()
        }
    }

    /// Product T-norm over soft confidences.
    pub fn strength<T: Real>(&self, c: &[T]) -> T {
        let pos = self.positive.iter().fold(T::one(), |acc, &i| acc * c[i]);
        self.negated.iter().fold(pos, |acc, &i| acc * (T::one() - c[i]))
    }

    /// Boolean evaluation on fact bits.
    pub fn fires(&self, bits: &[u8]) -> bool {
        self.positive.iter().all(|&i| bits[i] == 1) && self.negated.iter().all(|&i| bits[i] == 0)
    }

    pub fn same_literals(&self, positive: &[usize], negated: &[usize]) -> bool {
        let mut p = positive.to_vec();
        let mut n = negated.to_vec();
        p.sort_unstable();
        p.dedup();
        n.sort_unstable();
        n.dedup();
        self.positive == p && self.negated == n
    }
}

/// Thresholds used to produce a rule set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Literal mass threshold, strict.
    pub tau_prune: f64,
    /// Minimum validation firing rate.
    pub rho_min: f64,
    /// Minimum vote margin; 0 disables the check.
    pub w_min: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            tau_prune: 0.5,
            rho_min: 0.1,
            w_min: 0.5,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_prune > 0.0 && self.tau_prune < 1.0) {
            return Err(Error::Config("tau_prune must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.rho_min) {
            return Err(Error::Config("rho_min must lie in [0, 1]".into()));
        }
        if !(self.w_min >= 0.0) {
            return Err(Error::Config("w_min must be non-negative".into()));
        }
        Ok(())
    }
}

/// Retained rules plus the settings and diagnostics that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<SymbolicRule>,
    pub class_bias: Vec<f64>,
    pub config: PruneConfig,
    pub validation_samples: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RuleSet {
    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    /// Number of retained rules whose top-weighted class is `class`.
    pub fn count_for_class(&self, class: usize) -> usize {
        self.rules.iter().filter(|r| r.top_class() == class).count()
    }

    /// Mean retained-rule count over `classes` (e.g. the risk classes).
    pub fn mean_per_class(&self, classes: &[usize]) -> f64 {
        if classes.is_empty() {
            return 0.0;
        }
        let total: usize = classes.iter().map(|&c| self.count_for_class(c)).sum();
        total as f64 / classes.len() as f64
    }

    pub fn find(&self, index: usize) -> Option<&SymbolicRule> {
        self.rules.iter().find(|r| r.index == index)
    }

    /// Whether some retained rule has exactly these literal sets.
    pub fn contains_literals(&self, positive: &[usize], negated: &[usize]) -> bool {
        self.rules.iter().any(|r| r.same_literals(positive, negated))
    }

    /// Frozen reasoner over `facts` facts that evaluates exactly these rules:
    /// one-hot selections, hard gates, and the exported weights and bias.
    /// Rule `m` of the reasoner is `self.rules[m]`. Unused slots of shorter
    /// rules select nothing and are negated, so they evaluate to 1 and the
    /// strengths equal [`SymbolicRule::strength`] on any confidences.
    pub fn reasoner<T: Real>(&self, facts: usize) -> Result<Reasoner<T>> {
        let classes = self.class_bias.len();
        let rules = self.rules.len();
        let slots = self.rules.iter().map(SymbolicRule::len).max().unwrap_or(1).max(1);
        let mut selections = vec![T::zero(); rules * slots * facts];
        let mut gates = vec![T::zero(); rules * slots];
        let mut rule_weight = vec![T::zero(); classes * rules];
        for (m, r) in self.rules.iter().enumerate() {
            if r.is_empty() {
                return Err(Error::Config(format!("rule {} has no literals", r.index)));
            }
            if r.weights.len() != classes {
                return Err(Error::shape("rule weights", classes, r.weights.len()));
            }
            let literals: Vec<(usize, bool)> = r
                .positive
                .iter()
                .map(|&i| (i, false))
                .chain(r.negated.iter().map(|&i| (i, true)))
                .collect();
            if let Some(&(bad, _)) = literals.iter().find(|(i, _)| *i >= facts) {
                return Err(Error::UnknownFact(format!("fact index {bad}")));
            }
            for j in 0..slots {
                match literals.get(j) {
                    Some(&(fact, negated)) => {
                        selections[(m * slots + j) * facts + fact] = T::one();
                        gates[m * slots + j] = if negated { T::one() } else { T::zero() };
                    }
                    // empty selection with a closed gate: truth 1
                    None => gates[m * slots + j] = T::one(),
                }
            }
            for (y, &w) in r.weights.iter().enumerate() {
                rule_weight[y * rules + m] = T::lit(w);
            }
        }
        Ok(Reasoner {
            facts,
            rules,
            slots,
            classes,
            selections,
            gates,
            rule_weight,
            class_bias: self.class_bias.iter().map(|&b| T::lit(b)).collect(),
        })
    }

    /// Class scores of the rule set used as a standalone classifier.
    pub fn scores<T: Real>(&self, c: &[T]) -> Vec<T> {
        let mut scores: Vec<T> = self.class_bias.iter().map(|&b| T::lit(b)).collect();
        for r in &self.rules {
            let s = r.strength(c);
            for (y, &w) in r.weights.iter().enumerate() {
                scores[y] += T::lit(w) * s;
            }
        }
        scores
    }
}

/// Literal sets from explicit selections (`M x L x N`) and gates (`M x L`).
pub fn discretize_selections(
    selections: &[f64],
    gates: &[f64],
    rule_weight: &[f64],
    rules: usize,
    slots: usize,
    tau_prune: f64,
) -> Result<Vec<SymbolicRule>> {
    if rules == 0 || slots == 0 || gates.len() != rules * slots || selections.len() % (rules * slots) != 0 {
        return Err(Error::shape("selections", rules * slots, gates.len()));
    }
    if rule_weight.len() % rules != 0 {
        return Err(Error::shape("rule weights", rules, rule_weight.len()));
    }
    let n = selections.len() / (rules * slots);
    let classes = rule_weight.len() / rules;
    let mut out = Vec::with_capacity(rules);
    for m in 0..rules {
        let mut positive = Vec::new();
        let mut negated = Vec::new();
        for j in 0..slots {
            let eta = gates[m * slots + j];
            let gamma = &selections[(m * slots + j) * n..(m * slots + j + 1) * n];
            for (i, &g) in gamma.iter().enumerate() {
                if g * (1.0 - eta) > tau_prune {
                    positive.push(i);
                }
                if g * eta > tau_prune {
                    negated.push(i);
                }
            }
        }
        positive.sort_unstable();
        positive.dedup();
        negated.sort_unstable();
        negated.dedup();
        out.push(SymbolicRule {
            index: m,
            positive,
            negated,
            weights: (0..classes).map(|y| rule_weight[y * rules + m]).collect(),
            reliability: None,
        });
    }
    Ok(out)
}

fn to_f64<T: Real>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.as_f64()).collect()
}

/// Candidate rules from the model's evaluation-time selections.
pub fn discretize<T: Real>(model: &LogicModel<T>, tau_prune: f64) -> Result<Vec<SymbolicRule>> {
    discretize_reasoner(&model.eval_reasoner(), tau_prune)
}

pub fn discretize_reasoner<T: Real>(reasoner: &Reasoner<T>, tau_prune: f64) -> Result<Vec<SymbolicRule>> {
    if !(tau_prune > 0.0 && tau_prune < 1.0) {
        return Err(Error::Config("tau_prune must lie in (0, 1)".into()));
    }
    discretize_selections(
        &to_f64(&reasoner.selections),
        &to_f64(&reasoner.gates),
        &to_f64(&reasoner.rule_weight),
        reasoner.rules,
        reasoner.slots,
        tau_prune,
    )
}

/// Validation evidence for pruning: fused confidences and labels.
#[derive(Clone, Copy, Debug)]
pub struct ValidationView<'a> {
    pub confidences: &'a [Vec<f64>],
    pub labels: &'a [usize],
}

/// Drops short, contradictory, unreliable and inert rules and orders the rest
/// by descending maximum class weight (stable).
pub fn prune(
    candidates: Vec<SymbolicRule>,
    class_bias: &[f64],
    validation: ValidationView<'_>,
    config: &PruneConfig,
) -> Result<RuleSet> {
    config.validate()?;
    if validation.confidences.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if validation.confidences.len() != validation.labels.len() {
        return Err(Error::shape(
            "validation labels",
            validation.confidences.len(),
            validation.labels.len(),
        ));
    }
    let mut kept = Vec::new();
    for mut rule in candidates {
        if !structurally_valid(&rule, config) {
            continue;
        }
        let top = rule.top_class();
        let (sum, count) = validation
            .confidences
            .iter()
            .zip(validation.labels)
            .filter(|(_, &y)| y == top)
            .fold((0.0, 0usize), |(s, n), (c, _)| (s + rule.strength(c), n + 1));
        let rho = if count == 0 { 0.0 } else { sum / count as f64 };
        rule.reliability = Some(rho);
        if rho < config.rho_min {
            continue;
        }
        kept.push(rule);
    }
    Ok(finish(kept, class_bias, config, validation.labels.len(), Vec::new()))
}

fn structurally_valid(rule: &SymbolicRule, config: &PruneConfig) -> bool {
    rule.len() >= 2 && !rule.is_contradictory() && rule.vote_margin() >= config.w_min
}

fn finish(
    mut kept: Vec<SymbolicRule>,
    class_bias: &[f64],
    config: &PruneConfig,
    validation_samples: usize,
    mut warnings: Vec<String>,
) -> RuleSet {
    kept.sort_by(|a, b| b.max_weight().total_cmp(&a.max_weight()));
    if kept.is_empty() {
        warnings.push("every rule was pruned".to_string());
    }
    RuleSet {
        rules: kept,
        class_bias: class_bias.to_vec(),
        config: *config,
        validation_samples,
        warnings,
    }
}

/// Like [`prune`] without the reliability check, for when no validation data
/// is at hand. Reliabilities stay unset and a warning says so.
pub fn prune_unvalidated(candidates: Vec<SymbolicRule>, class_bias: &[f64], config: &PruneConfig) -> Result<RuleSet> {
    config.validate()?;
    let kept = candidates
        .into_iter()
        .filter(|r| structurally_valid(r, config))
        .collect();
    let warnings = vec!["no validation data: rule reliability was not checked".to_string()];
    Ok(finish(kept, class_bias, config, 0, warnings))
}

/// Discretizes `model` and applies [`prune_unvalidated`].
pub fn extract_unvalidated<T: Real>(model: &LogicModel<T>, config: &PruneConfig) -> Result<RuleSet> {
    let candidates = discretize(model, config.tau_prune)?;
    let bias = to_f64(model.params.value(crate::numeric::params::Group::ClassBias));
    prune_unvalidated(candidates, &bias, config)
}

/// Discretizes and prunes `model` against validation views.
pub fn extract<T: Real>(
    model: &LogicModel<T>,
    validation_views: &[&[Vec<T>]],
    labels: &[usize],
    config: &PruneConfig,
) -> Result<RuleSet> {
    let confidences = validation_views
        .iter()
        .map(|views| Ok(to_f64(&model.fact_graph(views)?.confidences)))
        .collect::<Result<Vec<_>>>()?;
    extract_from_confidences(model, &confidences, labels, config)
}

pub fn extract_from_confidences<T: Real>(
    model: &LogicModel<T>,
    confidences: &[Vec<f64>],
    labels: &[usize],
    config: &PruneConfig,
) -> Result<RuleSet> {
    let candidates = discretize(model, config.tau_prune)?;
    let bias = to_f64(model.params.value(crate::numeric::params::Group::ClassBias));
    prune(
        candidates,
        &bias,
        ValidationView {
            confidences,
            labels,
        },
        config,
    )
}

pub const IMPLIES: &str = "\u{2190}";
pub const AND: &str = "\u{2227}";
pub const NOT: &str = "\u{ac}";

/// `Class ← a ∧ b ∧ ¬c`, literals in fact order.
pub fn render(rule: &SymbolicRule, vocab: &Vocabulary) -> Result<String> {
    let class = vocab.class_id(rule.top_class())?;
    let mut literals: Vec<(usize, bool)> = rule
        .positive
        .iter()
        .map(|&i| (i, false))
        .chain(rule.negated.iter().map(|&i| (i, true)))
        .collect();
    literals.sort_unstable();
    let mut parts = Vec::with_capacity(literals.len());
    for (i, neg) in literals {
        let id = vocab.fact_id(i)?;
        parts.push(if neg { format!("{NOT}{id}") } else { id.to_string() });
    }
    Ok(format!("{class} {IMPLIES} {}", parts.join(&format!(" {AND} "))))
}

/// Human-readable export of one rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub index: usize,
    pub class: String,
    pub positive: Vec<String>,
    pub negated: Vec<String>,
    /// Class id to weight.
    pub weights: Vec<(String, f64)>,
    pub reliability: Option<f64>,
    pub text: String,
}

/// Serialised rule set as consumed by the service and its clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleSetDocument {
    pub format_version: u32,
    pub vocabulary: Vocabulary,
    pub tau_prune: f64,
    pub rho_min: f64,
    pub w_min: f64,
    pub validation_samples: usize,
    pub class_bias: Vec<f64>,
    pub rules: Vec<RuleRecord>,
    pub warnings: Vec<String>,
}

pub const RULESET_FORMAT_VERSION: u32 = 1;

impl RuleSetDocument {
    pub fn new(set: &RuleSet, vocab: &Vocabulary) -> Result<Self> {
        let names = |ids: &[usize]| -> Result<Vec<String>> {
            ids.iter().map(|&i| Ok(vocab.fact_id(i)?.to_string())).collect()
        };
        let rules = set
            .rules
            .iter()
            .map(|r| {
                if r.weights.len() != vocab.num_classes() {
                    return Err(Error::shape("rule weights", vocab.num_classes(), r.weights.len()));
                }
                Ok(RuleRecord {
                    index: r.index,
                    class: vocab.class_id(r.top_class())?.to_string(),
                    positive: names(&r.positive)?,
                    negated: names(&r.negated)?,
                    weights: vocab
                        .classes
                        .iter()
                        .zip(&r.weights)
                        .map(|(c, &w)| (c.id.clone(), w))
                        .collect(),
                    reliability: r.reliability,
                    text: render(r, vocab)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            format_version: RULESET_FORMAT_VERSION,
            vocabulary: vocab.clone(),
            tau_prune: set.config.tau_prune,
            rho_min: set.config.rho_min,
            w_min: set.config.w_min,
            validation_samples: set.validation_samples,
            class_bias: set.class_bias.clone(),
            rules,
            warnings: set.warnings.clone(),
        })
    }

    /// Rebuilds the rule set, checking names and rendered text.
    pub fn to_rule_set(&self) -> Result<RuleSet> {
        if self.format_version != RULESET_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: self.format_version,
                expected: RULESET_FORMAT_VERSION,
            });
        }
        let vocab = &self.vocabulary;
        vocab.validate()?;
        let ids = |names: &[String]| -> Result<Vec<usize>> {
            let mut v = names.iter().map(|n| vocab.fact_index(n)).collect::<Result<Vec<_>>>()?;
            v.sort_unstable();
            Ok(v)
        };
        let rules = self
            .rules
            .iter()
            .map(|r| {
                let mut weights = vec![0.0; vocab.num_classes()];
                for (class, w) in &r.weights {
                    weights[vocab.class_index(class)?] = *w;
                }
                let rule = SymbolicRule {
                    index: r.index,
                    positive: ids(&r.positive)?,
                    negated: ids(&r.negated)?,
                    weights,
                    reliability: r.reliability,
                };
                if rule.is_contradictory() {
                    return Err(Error::Config(format!("rule {} is contradictory", r.index)));
                }
                Ok(rule)
            })
            .collect::<Result<Vec<_>>>()?;
        if self.class_bias.len() != vocab.num_classes() {
            return Err(Error::shape("class bias", vocab.num_classes(), self.class_bias.len()));
        }
        Ok(RuleSet {
            rules,
            class_bias: self.class_bias.clone(),
            config: PruneConfig {
                tau_prune: self.tau_prune,
                rho_min: self.rho_min,
                w_min: self.w_min,
            },
            validation_samples: self.validation_samples,
            warnings: self.warnings.clone(),
        })
    }
}
