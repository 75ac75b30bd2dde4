//! Immutable inference snapshot behind `explain` and the HTTP service.
//!
//! An [`Engine`] holds a loaded model, the rule set used for traces and the
//! reasoner that scores classes. In [`Mode::Model`] the reasoner is the
//! model's own (deterministic selections at the final temperature); in
//! [`Mode::Rules`] it is rebuilt from the rule set, so an edited rule export
//! can be served as a frozen classifier. Fusion always comes from the model.
//!
//! Every method takes `&self`; requests never mutate the snapshot.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use factlogic::counterfactual::{
    exact_search, greedy_search, sensitivity_report, SensitivityEntry, EXACT_FACT_CAP,
};
use factlogic::fusion::{FactGraph, Pooling};
use factlogic::io::{Checkpoint, DatasetRef, HistoryDigest};
use factlogic::logic::{LogicConfig, Reasoner};
use factlogic::model::{Inference, LogicModel};
use factlogic::numeric::params::Dims;
use factlogic::rules::{extract_unvalidated, PruneConfig, RuleSet, RuleSetDocument};
use factlogic::trainer::TrainConfig;
use factlogic::vocab::{ClassDescriptor, Vocabulary};
use factlogic::{CounterfactualResult, Error, SearchOptions};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{CliError, CliResult, Context};

pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_MAX_CARD: usize = 3;
pub const DEFAULT_CF_BUDGET: Duration = Duration::from_secs(2);
/// Rules with strength above this are reported as fired.
pub const FIRED_THRESHOLD: f64 = 0.5;

/// Which reasoner scores the classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The trained reasoning layer.
    #[default]
    Model,
    /// The exported rule set, frozen.
    Rules,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub mode: Mode,
    pub top_k: usize,
    pub max_card: usize,
    /// Wall-clock budget of one exact counterfactual search.
    pub cf_budget: Duration,
    /// Allow exact search above the fact cap.
    pub force_exact: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            mode: Mode::Model,
            top_k: DEFAULT_TOP_K,
            max_card: DEFAULT_MAX_CARD,
            cf_budget: DEFAULT_CF_BUDGET,
            force_exact: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    MalformedBody,
    VocabularyMismatch,
    Internal,
}

/// A request that cannot be answered; `field` names the offending input.
#[derive(Clone, Debug, PartialEq, Error, Serialize)]
#[error("{message}")]
pub struct RequestError {
    pub kind: ErrorKind,
    pub field: Option<String>,
    pub message: String,
}

impl RequestError {
    pub fn malformed(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::MalformedBody,
            field: Some(field.into()),
            message: message.into(),
        }
    }

    pub fn mismatch(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::VocabularyMismatch,
            field: Some(field.into()),
            message: message.into(),
        }
    }

    fn internal(err: Error) -> Self {
        Self {
            kind: ErrorKind::Internal,
            field: None,
            message: err.to_string(),
        }
    }
}

impl From<RequestError> for CliError {
    fn from(e: RequestError) -> Self {
        match e.kind {
            ErrorKind::VocabularyMismatch => CliError::VocabularyMismatch(field_message(&e)),
            _ => CliError::Invalid(field_message(&e)),
        }
    }
}

fn field_message(e: &RequestError) -> String {
    match &e.field {
        Some(f) => format!("{f}: {}", e.message),
        None => e.message.clone(),
    }
}

/// Fact confidences in vocabulary order, or keyed by fact id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactValues {
    List(Vec<f64>),
    Named(BTreeMap<String, f64>),
}

/// A fact given by vocabulary position or id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactRef {
    Index(usize),
    Id(String),
}

/// Body of `POST /infer`; also the sample file of `explain`. Exactly one of
/// `confidences` and `views` must be present. Other fields are ignored, so a
/// dataset record can be passed as is.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InferRequest {
    #[serde(default)]
    pub confidences: Option<FactValues>,
    /// `V` per-view feature vectors.
    #[serde(default)]
    pub views: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub counterfactual: CounterfactualOptions,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualOptions {
    /// `true` forces exact search, `false` forces greedy; by default exact
    /// search runs when the vocabulary is small enough.
    #[serde(default)]
    pub exact: Option<bool>,
    #[serde(default)]
    pub max_card: Option<usize>,
}

/// Body of `POST /counterfactual`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRequest {
    pub confidences: FactValues,
    #[serde(default)]
    pub options: CounterfactualOptions,
}

/// Body of `POST /whatif`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhatIfRequest {
    pub confidences: FactValues,
    pub intervention: WhatIfIntervention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhatIfIntervention {
    pub fact: FactRef,
    /// New confidence in [0, 1].
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactGraphDoc {
    pub facts: Vec<String>,
    pub confidences: Vec<f64>,
    pub views: usize,
    /// Per fact, the weight of each view. Confidences given directly count
    /// as a single view.
    pub attribution: Vec<Vec<f64>>,
    /// Per fact, the reliability logit of each view.
    pub reliabilities: Vec<Vec<f64>>,
}

/// A rule of the rule set evaluated on one input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleTrace {
    pub index: usize,
    pub class: String,
    pub text: String,
    pub strength: f64,
    /// Weight of the rule for the predicted class.
    pub weight: f64,
    /// `weight * strength`.
    pub contribution: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedIntervention {
    pub fact: String,
    pub fact_index: usize,
    pub value: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityDoc {
    #[serde(flatten)]
    pub intervention: NamedIntervention,
    pub predicted: usize,
    pub predicted_class: String,
    pub label_changed: bool,
    pub risk_delta: f64,
    pub posterior: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    /// Minimal flip found by exact search.
    Exact,
    /// Flip found by greedy search.
    Greedy,
    /// No flip within the cardinality limit.
    NotFound,
    /// Exact search ran out of time; `result` holds the greedy fallback.
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualDoc {
    pub actions: Vec<NamedIntervention>,
    pub original_class_id: String,
    pub new_class_id: String,
    #[serde(flatten)]
    pub result: CounterfactualResult,
}

/// Response of `POST /counterfactual`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResponse {
    /// `false` only when the exact search timed out.
    pub complete: bool,
    pub status: SearchStatus,
    pub max_card: usize,
    pub result: Option<CounterfactualDoc>,
}

/// Response of `POST /infer` and output of `explain`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationPayload {
    pub mode: Mode,
    pub predicted: usize,
    pub predicted_class: String,
    pub risk: bool,
    pub classes: Vec<String>,
    pub posterior: Vec<f64>,
    pub fact_graph: FactGraphDoc,
    /// Rules with strength above 0.5, largest contribution first.
    pub fired_rules: Vec<RuleTrace>,
    /// Strength of every rule of the rule set, in rule set order.
    pub rule_strengths: Vec<f64>,
    /// Most risk-reducing single-fact interventions.
    pub sensitivity: Vec<SensitivityDoc>,
    pub counterfactual: CounterfactualResponse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub predicted: usize,
    pub predicted_class: String,
    pub posterior: Vec<f64>,
    /// Total posterior of the risk classes.
    pub risk_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleChange {
    pub index: usize,
    pub text: String,
    pub before: f64,
    pub after: f64,
}

/// Response of `POST /whatif`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub fact: String,
    pub fact_index: usize,
    pub previous_value: f64,
    pub value: f64,
    pub before: Outcome,
    pub after: Outcome,
    pub risk_delta: f64,
    /// `risk_delta` relative to the risk mass before, when that is non-zero.
    pub risk_change_ratio: Option<f64>,
    pub rules: Vec<RuleChange>,
    /// Rules fired after the intervention.
    pub fired_rules: Vec<RuleTrace>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSettings {
    pub max_card: usize,
    pub budget_ms: u64,
    pub exact_fact_cap: usize,
}

/// Response of `GET /model`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub mode: Mode,
    pub format_version: u32,
    pub vocabulary: Vocabulary,
    pub facts: Vec<String>,
    pub classes: Vec<ClassDescriptor>,
    pub dims: Dims,
    pub logic: LogicConfig,
    pub pooling: Pooling,
    pub attribution_eps: f64,
    pub training: Option<TrainConfig>,
    pub history: Option<HistoryDigest>,
    pub dataset: Option<DatasetRef>,
    pub prune: PruneConfig,
    pub rules: usize,
    pub counterfactual: CounterfactualSettings,
}

pub struct Engine {
    info: ModelInfo,
    vocab: Vocabulary,
    model: LogicModel<f64>,
    reasoner: Reasoner<f64>,
    rules: RuleSet,
    document: RuleSetDocument,
    /// Reasoner rule index of each rule set entry.
    rule_slots: Vec<usize>,
    risk: Vec<usize>,
    settings: Settings,
}

impl Engine {
    /// Builds the snapshot. Without a rule document the rules are extracted
    /// from the model with default thresholds and no reliability check.
    pub fn new(checkpoint: &Checkpoint, document: Option<RuleSetDocument>, settings: Settings) -> CliResult<Self> {
        let model = checkpoint.to_model().context("loading checkpoint")?;
        let vocab = checkpoint.vocabulary.clone();
        let document = match document {
            Some(doc) => {
                if doc.vocabulary != vocab {
                    return Err(CliError::VocabularyMismatch(
                        "the rule set was exported for a different vocabulary".into(),
                    ));
                }
                doc
            }
            None => {
                let set = extract_unvalidated(&model, &PruneConfig::default()).context("extracting rules")?;
                RuleSetDocument::new(&set, &vocab).context("exporting rules")?
            }
        };
        let rules = document.to_rule_set().context("reading rule set")?;
        if rules.class_bias.len() != vocab.num_classes() {
            return Err(CliError::VocabularyMismatch("rule set class bias has the wrong length".into()));
        }
        let (reasoner, rule_slots) = match settings.mode {
            Mode::Model => {
                if let Some(r) = rules.rules.iter().find(|r| r.index >= model.dims.rules) {
                    return Err(CliError::Invalid(format!(
                        "rule {} does not exist in a model with {} rules",
                        r.index, model.dims.rules
                    )));
                }
                (model.eval_reasoner(), rules.rules.iter().map(|r| r.index).collect())
            }
            Mode::Rules => (
                rules.reasoner(vocab.num_facts()).context("building rule reasoner")?,
                (0..rules.len()).collect(),
            ),
        };
        let info = ModelInfo {
            mode: settings.mode,
            format_version: checkpoint.format_version,
            vocabulary: vocab.clone(),
            facts: vocab.facts.iter().map(|f| f.id.clone()).collect(),
            classes: vocab.classes.clone(),
            dims: model.dims,
            logic: model.logic,
            pooling: model.pooling,
            attribution_eps: model.attribution_eps,
            training: checkpoint.training.clone(),
            history: checkpoint.history.clone(),
            dataset: checkpoint.dataset.clone(),
            prune: rules.config,
            rules: rules.len(),
            counterfactual: CounterfactualSettings {
                max_card: settings.max_card,
                budget_ms: u64::try_from(settings.cf_budget.as_millis()).unwrap_or(u64::MAX),
                exact_fact_cap: EXACT_FACT_CAP,
            },
        };
        Ok(Self {
            risk: vocab.risk_classes(),
            info,
            vocab,
            model,
            reasoner,
            rules,
            document,
            rule_slots,
            settings,
        })
    }

    pub fn info(&self) -> &ModelInfo {
        &self.info
    }

    pub fn rules_document(&self) -> &RuleSetDocument {
        &self.document
    }

    pub fn rule_set(&self) -> &RuleSet {
        &self.rules
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn model(&self) -> &LogicModel<f64> {
        &self.model
    }

    pub fn reasoner(&self) -> &Reasoner<f64> {
        &self.reasoner
    }

    /// Confidences in vocabulary order, validated.
    pub fn confidences(&self, values: &FactValues, field: &str) -> Result<Vec<f64>, RequestError> {
        let n = self.vocab.num_facts();
        let c = match values {
            FactValues::List(list) => {
                if list.len() != n {
                    return Err(RequestError::mismatch(
                        field,
                        format!("expected {n} fact confidences, got {}", list.len()),
                    ));
                }
                list.clone()
            }
            FactValues::Named(map) => {
                if let Some(unknown) = map.keys().find(|k| self.vocab.fact_index(k).is_err()) {
                    return Err(RequestError::mismatch(
                        format!("{field}.{unknown}"),
                        "unknown fact",
                    ));
                }
                self.vocab
                    .facts
                    .iter()
                    .map(|f| {
                        map.get(&f.id).copied().ok_or_else(|| {
                            RequestError::mismatch(format!("{field}.{}", f.id), "missing fact")
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?
            }
        };
        for (i, &x) in c.iter().enumerate() {
            if !(0.0..=1.0).contains(&x) {
                return Err(RequestError::malformed(
                    format!("{field}.{}", self.vocab.facts[i].id),
                    format!("confidence {x} outside [0, 1]"),
                ));
            }
        }
        Ok(c)
    }

    fn views(&self, views: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, RequestError> {
        if views.is_empty() {
            return Err(RequestError::malformed("views", "at least one view is required"));
        }
        let d = self.model.dims.features;
        for (v, x) in views.iter().enumerate() {
            if x.len() != d {
                return Err(RequestError::mismatch(
                    format!("views[{v}]"),
                    format!("expected {d} features, got {}", x.len()),
                ));
            }
            if let Some(j) = x.iter().position(|f| !f.is_finite()) {
                return Err(RequestError::malformed(format!("views[{v}][{j}]"), "feature is not finite"));
            }
        }
        Ok(views.to_vec())
    }

    fn fact_graph(&self, req: &InferRequest) -> Result<FactGraph<f64>, RequestError> {
        match (&req.confidences, &req.views) {
            (Some(c), None) => Ok(FactGraph::from_confidences(self.confidences(c, "confidences")?)),
            (None, Some(v)) => self.model.fact_graph(&self.views(v)?).map_err(RequestError::internal),
            _ => Err(RequestError::malformed(
                "confidences",
                "exactly one of `confidences` and `views` is required",
            )),
        }
    }

    /// Posterior and rule activations for `c` under the serving reasoner.
    pub fn infer_confidences(&self, c: &[f64]) -> Result<Inference<f64>, RequestError> {
        self.model
            .infer_graph(FactGraph::from_confidences(c.to_vec()), &self.reasoner)
            .map_err(RequestError::internal)
    }

    pub fn explain(&self, req: &InferRequest) -> Result<ExplanationPayload, RequestError> {
        let graph = self.fact_graph(req)?;
        let inference = self
            .model
            .infer_graph(graph, &self.reasoner)
            .map_err(RequestError::internal)?;
        let c = inference.graph.confidences.clone();
        let top_k = req.top_k.unwrap_or(self.settings.top_k);
        let sensitivity = sensitivity_report(&self.reasoner, &c, &self.risk)
            .map_err(RequestError::internal)?
            .into_iter()
            .take(top_k)
            .map(|e| self.sensitivity_doc(e))
            .collect();
        let counterfactual = self.counterfactual_for(&c, req.counterfactual)?;
        let strengths = self.rule_strengths(&inference.activation.strengths);
        let predicted = inference.predicted;
        Ok(ExplanationPayload {
            mode: self.settings.mode,
            predicted,
            predicted_class: self.class_id(predicted),
            risk: self.vocab.is_risk(predicted),
            classes: self.vocab.classes.iter().map(|c| c.id.clone()).collect(),
            fired_rules: self.traces(&strengths, predicted),
            rule_strengths: strengths,
            posterior: inference.posterior,
            fact_graph: self.graph_doc(&inference.graph),
            sensitivity,
            counterfactual,
        })
    }

    pub fn counterfactual(&self, req: &CounterfactualRequest) -> Result<CounterfactualResponse, RequestError> {
        let c = self.confidences(&req.confidences, "confidences")?;
        self.counterfactual_for(&c, req.options)
    }

    fn counterfactual_for(&self, c: &[f64], options: CounterfactualOptions) -> Result<CounterfactualResponse, RequestError> {
        let max_card = options.max_card.unwrap_or(self.settings.max_card);
        if max_card == 0 {
            return Err(RequestError::malformed("options.max_card", "must be at least 1"));
        }
        let n = c.len();
        let exact = options.exact.unwrap_or(n <= EXACT_FACT_CAP || self.settings.force_exact);
        let search = SearchOptions {
            max_card,
            risk_classes: self.risk.clone(),
            deadline: Some(Instant::now() + self.settings.cf_budget),
            force_exact: exact,
        };
        let respond = |complete, status, result: Option<CounterfactualResult>| CounterfactualResponse {
            complete,
            status,
            max_card,
            result: result.map(|r| self.counterfactual_doc(r)),
        };
        let greedy = |search: &SearchOptions| match greedy_search(&self.reasoner, c, search) {
            Ok(r) => Ok(Some(r)),
            Err(Error::NoCounterfactual(_)) => Ok(None),
            Err(e) => Err(RequestError::internal(e)),
        };
        if !exact {
            let result = greedy(&search)?;
            let status = if result.is_some() { SearchStatus::Greedy } else { SearchStatus::NotFound };
            return Ok(respond(true, status, result));
        }
        match exact_search(&self.reasoner, c, &search) {
            Ok(r) => Ok(respond(true, SearchStatus::Exact, Some(r))),
            Err(Error::NoCounterfactual(_)) => Ok(respond(true, SearchStatus::NotFound, None)),
            Err(Error::Timeout) => Ok(respond(false, SearchStatus::Timeout, greedy(&search)?)),
            Err(e) => Err(RequestError::internal(e)),
        }
    }

    pub fn whatif(&self, req: &WhatIfRequest) -> Result<WhatIfResponse, RequestError> {
        let c = self.confidences(&req.confidences, "confidences")?;
        let fact = match &req.intervention.fact {
            FactRef::Index(i) if *i < c.len() => *i,
            FactRef::Index(i) => {
                return Err(RequestError::mismatch(
                    "intervention.fact",
                    format!("fact index {i} out of range"),
                ))
            }
            FactRef::Id(id) => self
                .vocab
                .fact_index(id)
                .map_err(|_| RequestError::mismatch("intervention.fact", format!("unknown fact `{id}`")))?,
        };
        let value = req.intervention.value;
        if !(0.0..=1.0).contains(&value) {
            return Err(RequestError::malformed(
                "intervention.value",
                format!("value {value} outside [0, 1]"),
            ));
        }
        let mut after_c = c.clone();
        after_c[fact] = value;
        let before = self.infer_confidences(&c)?;
        let after = self.infer_confidences(&after_c)?;
        let before_strengths = self.rule_strengths(&before.activation.strengths);
        let after_strengths = self.rule_strengths(&after.activation.strengths);
        let before = self.outcome(&before);
        let after_outcome = self.outcome(&after);
        let risk_delta = after_outcome.risk_mass - before.risk_mass;
        Ok(WhatIfResponse {
            fact: self.vocab.facts[fact].id.clone(),
            fact_index: fact,
            previous_value: c[fact],
            value,
            risk_change_ratio: (before.risk_mass > 0.0).then(|| risk_delta / before.risk_mass),
            risk_delta,
            rules: self
                .document
                .rules
                .iter()
                .zip(before_strengths.iter().zip(&after_strengths))
                .map(|(r, (&b, &a))| RuleChange {
                    index: r.index,
                    text: r.text.clone(),
                    before: b,
                    after: a,
                })
                .collect(),
            fired_rules: self.traces(&after_strengths, after.predicted),
            before,
            after: after_outcome,
        })
    }

    fn outcome(&self, inference: &Inference<f64>) -> Outcome {
        Outcome {
            predicted: inference.predicted,
            predicted_class: self.class_id(inference.predicted),
            risk_mass: self.risk.iter().map(|&y| inference.posterior[y]).sum(),
            posterior: inference.posterior.clone(),
        }
    }

    fn class_id(&self, class: usize) -> String {
        self.vocab.classes[class].id.clone()
    }

    /// Strengths of the rule set entries, read from the reasoner activations.
    fn rule_strengths(&self, reasoner_strengths: &[f64]) -> Vec<f64> {
        self.rule_slots.iter().map(|&m| reasoner_strengths[m]).collect()
    }

    fn traces(&self, strengths: &[f64], predicted: usize) -> Vec<RuleTrace> {
        let m_rules = self.reasoner.rules;
        let mut out: Vec<RuleTrace> = self
            .document
            .rules
            .iter()
            .zip(&self.rule_slots)
            .zip(strengths)
            .filter(|(_, &tau)| tau > FIRED_THRESHOLD)
            .map(|((r, &m), &tau)| {
                let weight = self.reasoner.rule_weight[predicted * m_rules + m];
                RuleTrace {
                    index: r.index,
                    class: r.class.clone(),
                    text: r.text.clone(),
                    strength: tau,
                    weight,
                    contribution: weight * tau,
                }
            })
            .collect();
        out.sort_by(|a, b| b.contribution.total_cmp(&a.contribution).then(a.index.cmp(&b.index)));
        out
    }

    fn graph_doc(&self, graph: &FactGraph<f64>) -> FactGraphDoc {
        let rows = |values: &[f64]| -> Vec<Vec<f64>> {
            if graph.views == 0 || values.len() != graph.facts() * graph.views {
                return Vec::new();
            }
            values.chunks(graph.views).map(<[f64]>::to_vec).collect()
        };
        FactGraphDoc {
            facts: self.vocab.facts.iter().map(|f| f.id.clone()).collect(),
            confidences: graph.confidences.clone(),
            views: graph.views,
            attribution: rows(&graph.attribution),
            reliabilities: rows(&graph.reliabilities),
        }
    }

    fn named(&self, fact: usize, value: u8) -> NamedIntervention {
        NamedIntervention {
            fact: self.vocab.facts[fact].id.clone(),
            fact_index: fact,
            value,
        }
    }

    fn sensitivity_doc(&self, e: SensitivityEntry) -> SensitivityDoc {
        SensitivityDoc {
            intervention: self.named(e.intervention.fact, e.intervention.value),
            predicted_class: self.class_id(e.predicted),
            predicted: e.predicted,
            label_changed: e.label_changed,
            risk_delta: e.risk_delta,
            posterior: e.posterior,
        }
    }

    fn counterfactual_doc(&self, result: CounterfactualResult) -> CounterfactualDoc {
        CounterfactualDoc {
            actions: result
                .interventions
                .iter()
                .map(|i| self.named(i.fact, i.value))
                .collect(),
            original_class_id: self.class_id(result.original_class),
            new_class_id: self.class_id(result.new_class),
            result,
        }
    }
}
