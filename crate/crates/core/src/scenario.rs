//! Synthetic clinical scenarios with known ground-truth rules.
//!
//! A [`GeneratorConfig`] is the serialisable description; [`Generator`] is
//! its compiled form with fact names resolved to indices and the feature
//! embedding materialised. Every sample is a pure function of
//! `(config, index)`: sample `i` draws from its own ChaCha stream, so corpora
//! can be generated in any order or in parallel and stay byte-identical.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::vocab::{ClassDescriptor, FactDescriptor, Vocabulary};

/// Prior of one fact, optionally conditioned on a single earlier fact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactPrior {
    pub fact: String,
    /// `P(fact = 1)`, or `P(fact = 1 | parent = 0)` when `given` is set.
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub given: Option<Dependence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dependence {
    pub parent: String,
    /// `P(fact = 1 | parent = 1)`.
    pub p_if_parent: f64,
}

/// A labelling rule over fact names. Higher priority wins when several fire.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub class: String,
    #[serde(default)]
    pub positive: Vec<String>,
    #[serde(default)]
    pub negated: Vec<String>,
    pub priority: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub name: String,
    pub vocabulary: Vocabulary,
    /// One entry per fact, in sampling order; parents must come first.
    pub priors: Vec<FactPrior>,
    pub rules: Vec<RuleSpec>,
    /// Label when no rule fires.
    pub default_class: String,
    pub views: usize,
    pub features: usize,
    /// Occlusion probability applied to every (view, fact) pair.
    pub occlusion: f64,
    /// Optional `V x N` override of `occlusion`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occlusion_matrix: Option<Vec<Vec<f64>>>,
    /// Permit samples where a fact is hidden from every view.
    #[serde(default)]
    pub allow_full_occlusion: bool,
    /// Standard deviation of the isotropic feature noise.
    pub noise: f64,
    /// Scale of the orthonormal embedding columns.
    pub feature_gain: f64,
    /// Probability that a label is replaced by a different, uniformly chosen class.
    #[serde(default)]
    pub label_noise: f64,
    pub seed: u64,
}

fn fact(id: &str, label: &str) -> FactDescriptor {
    FactDescriptor {
        id: id.into(),
        label: label.into(),
    }
}

fn class(id: &str, label: &str, risk: bool) -> ClassDescriptor {
    ClassDescriptor {
        id: id.into(),
        label: label.into(),
        risk,
    }
}

fn prior(f: &str, p: f64) -> FactPrior {
    FactPrior {
        fact: f.into(),
        p,
        given: None,
    }
}

fn prior_given(f: &str, parent: &str, p_if_parent: f64, p: f64) -> FactPrior {
    FactPrior {
        fact: f.into(),
        p,
        given: Some(Dependence {
            parent: parent.into(),
            p_if_parent,
        }),
    }
}

fn rule(class: &str, positive: &[&str], negated: &[&str], priority: i32) -> RuleSpec {
    RuleSpec {
        class: class.into(),
        positive: positive.iter().map(|s| s.to_string()).collect(),
        negated: negated.iter().map(|s| s.to_string()).collect(),
        priority,
    }
}

pub const CLINIC8: &str = "clinic-8";

impl GeneratorConfig {
    /// The eight-predicate bedside reference scenario.
    pub fn clinic8() -> Self {
        let vocabulary = Vocabulary {
            facts: vec![
                fact("rail_down", "Bed rail lowered"),
                fact("edge_sitting", "Patient sitting on bed edge"),
                fact("caregiver_near", "Caregiver within reach"),
                fact("legs_over_edge", "Legs over the bed edge"),
                fact("support_contact", "Physical support contact"),
                fact("on_bed", "Patient on the bed"),
                fact("standing", "Patient standing"),
                fact("lights_on", "Room lights on"),
            ],
            classes: vec![
                class("resting", "Resting", false),
                class("assisted_transfer", "Assisted transfer", false),
                class("unattended_exit_risk", "Unattended exit risk", true),
                class("fall", "Fall", true),
            ],
        };
        Self {
            name: CLINIC8.into(),
            vocabulary,
            priors: vec![
                prior("on_bed", 0.75),
                prior_given("standing", "on_bed", 0.05, 0.6),
                prior_given("edge_sitting", "on_bed", 0.5, 0.1),
                prior_given("legs_over_edge", "edge_sitting", 0.7, 0.15),
                prior("rail_down", 0.5),
                prior("caregiver_near", 0.4),
                prior_given("support_contact", "caregiver_near", 0.6, 0.15),
                prior("lights_on", 0.5),
            ],
            rules: vec![
                rule("fall", &[], &["on_bed", "standing"], 4),
                rule(
                    "unattended_exit_risk",
                    &["edge_sitting", "rail_down"],
                    &["caregiver_near"],
                    3,
                ),
                rule("assisted_transfer", &["caregiver_near", "support_contact"], &[], 2),
                rule("resting", &["on_bed"], &["edge_sitting"], 1),
            ],
            default_class: "resting".into(),
            views: 3,
            features: 24,
            occlusion: 0.2,
            occlusion_matrix: None,
            allow_full_occlusion: false,
            noise: 0.05,
            feature_gain: 0.25,
            label_noise: 0.0,
            seed: 0,
        }
    }

    /// Looks up a built-in configuration by name.
    pub fn preset(name: &str) -> Option<Self> {
        (name == CLINIC8).then(Self::clinic8)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_occlusion(mut self, occlusion: f64) -> Self {
        self.occlusion = occlusion;
        self.occlusion_matrix = None;
        self
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }

    pub fn compile(&self) -> Result<Generator> {
        Generator::new(self.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct PriorNode {
    fact: usize,
    parent: Option<usize>,
    /// `P(fact = 1)` indexed by the parent value (both equal without parent).
    p: [f64; 2],
}

/// A ground-truth rule with indices resolved.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRule {
    pub positive: Vec<usize>,
    pub negated: Vec<usize>,
    pub class: usize,
    pub priority: i32,
}

impl GroundTruthRule {
    pub fn fires(&self, facts: &[u8]) -> bool {
        self.positive.iter().all(|&i| facts[i] == 1) && self.negated.iter().all(|&i| facts[i] == 0)
    }
}

/// One labelled sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: u64,
    /// Ground-truth fact bits.
    pub facts: Vec<u8>,
    pub label: usize,
    /// `V` feature vectors of length `D`.
    pub views: Vec<Vec<f64>>,
    /// `V x N` visibility (1 = visible).
    pub masks: Vec<Vec<u8>>,
}

impl Scenario {
    /// Fact bits as a `0`/`1` string in vocabulary order.
    pub fn pattern(&self) -> String {
        pattern_key(&self.facts)
    }

    pub fn fact_labels(&self) -> Vec<f64> {
        self.facts.iter().map(|&b| f64::from(b)).collect()
    }
}

pub fn pattern_key(bits: &[u8]) -> String {
    bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
}

/// Summary written next to a generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub config_hash: String,
    pub seed: u64,
    pub count: usize,
    pub class_histogram: BTreeMap<String, usize>,
    /// Prior-induced class distribution from exact enumeration.
    pub expected_class_distribution: BTreeMap<String, f64>,
    /// Number of samples per fact pattern (see [`pattern_key`]).
    pub census: BTreeMap<String, usize>,
}

/// Compiled generator.
#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    nodes: Vec<PriorNode>,
    rules: Vec<GroundTruthRule>,
    default_class: usize,
    /// `D x 2N`, row-major, columns orthogonal with norm `feature_gain`.
    embedding: Vec<f64>,
}

/// Largest fact count for which exact prior enumeration is attempted.
pub const MAX_ENUMERATION_FACTS: usize = 24;

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        let vocab = &config.vocabulary;
        vocab.validate()?;
        let n = vocab.num_facts();
        if config.views == 0 {
            return Err(Error::Config("views must be at least 1".into()));
        }
        if config.features < 2 * n {
            return Err(Error::Config(format!(
                "features ({}) must be at least twice the fact count ({n})",
                config.features
            )));
        }
        let prob_ok = |p: f64| p > 0.0 && p < 1.0;
        let mut placed = vec![false; n];
        let mut nodes = Vec::with_capacity(n);
        for pr in &config.priors {
            let fact = vocab.fact_index(&pr.fact)?;
            if placed[fact] {
                return Err(Error::Config(format!("fact {} has two priors", pr.fact)));
            }
            if !prob_ok(pr.p) {
                return Err(Error::Config(format!("prior of {} must lie in (0, 1)", pr.fact)));
            }
            let (parent, p) = match &pr.given {
                None => (None, [pr.p, pr.p]),
                Some(dep) => {
                    let parent = vocab.fact_index(&dep.parent)?;
                    if !placed[parent] {
                        return Err(Error::Config(format!(
                            "parent {} of {} must be sampled first",
                            dep.parent, pr.fact
                        )));
                    }
                    if !prob_ok(dep.p_if_parent) {
                        return Err(Error::Config(format!("prior of {} must lie in (0, 1)", pr.fact)));
                    }
                    (Some(parent), [pr.p, dep.p_if_parent])
                }
            };
            placed[fact] = true;
            nodes.push(PriorNode { fact, parent, p });
        }
        if let Some(missing) = placed.iter().position(|&p| !p) {
            return Err(Error::Config(format!("fact {} has no prior", vocab.facts[missing].id)));
        }
        let rules = config
            .rules
            .iter()
            .map(|r| {
                let positive = r
                    .positive
                    .iter()
                    .map(|f| vocab.fact_index(f))
                    .collect::<Result<Vec<_>>>()?;
                let negated = r
                    .negated
                    .iter()
                    .map(|f| vocab.fact_index(f))
                    .collect::<Result<Vec<_>>>()?;
                if positive.iter().any(|p| negated.contains(p)) {
                    return Err(Error::Config(format!("rule for {} is contradictory", r.class)));
                }
                Ok(GroundTruthRule {
                    positive,
                    negated,
                    class: vocab.class_index(&r.class)?,
                    priority: r.priority,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let default_class = vocab.class_index(&config.default_class)?;
        let occ_ok = |p: f64| (0.0..1.0).contains(&p);
        if !occ_ok(config.occlusion) {
            return Err(Error::Config("occlusion must lie in [0, 1)".into()));
        }
        if let Some(m) = &config.occlusion_matrix {
            if m.len() != config.views || m.iter().any(|row| row.len() != n) {
                return Err(Error::Config("occlusion matrix must be views x facts".into()));
            }
            if m.iter().flatten().any(|&p| !occ_ok(p)) {
                return Err(Error::Config("occlusion must lie in [0, 1)".into()));
            }
        }
        if !(config.noise >= 0.0 && config.noise.is_finite()) {
            return Err(Error::Config("noise must be finite and non-negative".into()));
        }
        if !(config.feature_gain > 0.0 && config.feature_gain.is_finite()) {
            return Err(Error::Config("feature gain must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.label_noise) {
            return Err(Error::Config("label noise must lie in [0, 1)".into()));
        }
        let embedding = orthonormal_embedding(config.features, 2 * n, config.feature_gain, config.seed);
        Ok(Self {
            config,
            nodes,
            rules,
            default_class,
            embedding,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.config.vocabulary
    }

    pub fn num_facts(&self) -> usize {
        self.config.vocabulary.num_facts()
    }

    pub fn num_classes(&self) -> usize {
        self.config.vocabulary.num_classes()
    }

    pub fn rules(&self) -> &[GroundTruthRule] {
        &self.rules
    }

    pub fn default_class(&self) -> usize {
        self.default_class
    }

    /// `D x 2N` row-major embedding matrix.
    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }

    pub fn occlusion(&self, view: usize, fact: usize) -> f64 {
        match &self.config.occlusion_matrix {
            Some(m) => m[view][fact],
            None => self.config.occlusion,
        }
    }

    /// Deterministic label function: highest-priority firing rule, ties to
    /// the earlier rule, default class when nothing fires.
    pub fn label(&self, facts: &[u8]) -> usize {
        let mut best: Option<&GroundTruthRule> = None;
        for r in &self.rules {
            if r.fires(facts) && best.is_none_or(|b| r.priority > b.priority) {
                best = Some(r);
            }
        }
        best.map_or(self.default_class, |r| r.class)
    }

    /// Prior probability of a full fact assignment.
    pub fn prior_probability(&self, facts: &[u8]) -> f64 {
        self.nodes
            .iter()
            .map(|node| {
                let parent = node.parent.map_or(0, |p| facts[p] as usize);
                let p1 = node.p[parent];
                if facts[node.fact] == 1 {
                    p1
                } else {
                    1.0 - p1
                }
            })
            .product()
    }

    /// Class distribution induced by the prior, label noise included, by
    /// enumerating all `2^N` fact assignments.
    pub fn expected_class_distribution(&self) -> Result<Vec<f64>> {
        let n = self.num_facts();
        if n > MAX_ENUMERATION_FACTS {
            return Err(Error::Config(format!("exact enumeration limited to {MAX_ENUMERATION_FACTS} facts")));
        }
        let c = self.num_classes();
        let eps = self.config.label_noise;
        let mut dist = vec![0.0; c];
        let mut bits = vec![0u8; n];
        for code in 0u64..(1u64 << n) {
            for (i, b) in bits.iter_mut().enumerate() {
                *b = ((code >> i) & 1) as u8;
            }
            let p = self.prior_probability(&bits);
            let y = self.label(&bits);
            for (k, d) in dist.iter_mut().enumerate() {
                *d += p * if k == y { 1.0 - eps } else { eps / (c - 1) as f64 };
            }
        }
        Ok(dist)
    }

    fn sample_rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        // stream 0 belongs to the embedding
        rng.set_stream(index + 1);
        rng
    }

    fn sample_facts<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u8> {
        let mut facts = vec![0u8; self.num_facts()];
        for node in &self.nodes {
            let parent = node.parent.map_or(0, |p| facts[p] as usize);
            facts[node.fact] = u8::from(rng.random_bool(node.p[parent]));
        }
        facts
    }

    fn sample_masks<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<u8>> {
        let (v, n) = (self.config.views, self.num_facts());
        let mut masks = vec![vec![0u8; n]; v];
        for k in 0..n {
            loop {
                for (view, mask) in masks.iter_mut().enumerate() {
                    mask[k] = u8::from(!rng.random_bool(self.occlusion(view, k)));
                }
                if self.config.allow_full_occlusion || masks.iter().any(|m| m[k] == 1) {
                    break;
                }
            }
        }
        masks
    }

    /// Noise-free features of one view: `W [p * mask; mask]`.
    pub fn encode(&self, facts: &[u8], mask: &[u8]) -> Vec<f64> {
        let n = self.num_facts();
        let cols = 2 * n;
        let mut input = vec![0.0; cols];
        for k in 0..n {
            input[k] = f64::from(facts[k] * mask[k]);
            input[n + k] = f64::from(mask[k]);
        }
        self.embedding
            .chunks_exact(cols)
            .map(|row| row.iter().zip(&input).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Sample `index` of the corpus.
    pub fn sample(&self, index: u64) -> Scenario {
        let mut rng = self.sample_rng(index);
        let facts = self.sample_facts(&mut rng);
        let mut label = self.label(&facts);
        let c = self.num_classes();
        if self.config.label_noise > 0.0 && rng.random_bool(self.config.label_noise) {
            let shift = rng.random_range(1..c);
            label = (label + shift) % c;
        }
        let masks = self.sample_masks(&mut rng);
        let views = masks
            .iter()
            .map(|mask| {
                let mut x = self.encode(&facts, mask);
                for xi in &mut x {
                    let e: f64 = rng.sample(StandardNormal);
                    *xi += self.config.noise * e;
                }
                x
            })
            .collect();
        Scenario {
            id: index,
            facts,
            label,
            views,
            masks,
        }
    }

    /// Samples `0..count`.
    pub fn generate(&self, count: usize) -> Vec<Scenario> {
        (0..count as u64).map(|i| self.sample(i)).collect()
    }

    /// Samples `start..start + count`, for disjoint corpora from one config.
    pub fn generate_range(&self, start: u64, count: usize) -> Vec<Scenario> {
        (start..start + count as u64).map(|i| self.sample(i)).collect()
    }

    pub fn manifest(&self, corpus: &[Scenario]) -> Result<Manifest> {
        let vocab = self.vocabulary();
        let mut class_histogram: BTreeMap<String, usize> =
            vocab.classes.iter().map(|c| (c.id.clone(), 0)).collect();
        let mut census = BTreeMap::new();
        for s in corpus {
            *class_histogram.get_mut(vocab.class_id(s.label)?).expect("class listed") += 1;
            *census.entry(s.pattern()).or_insert(0) += 1;
        }
        let expected = self.expected_class_distribution()?;
        Ok(Manifest {
            generator: self.config.name.clone(),
            config_hash: self.config.hash(),
            seed: self.config.seed,
            count: corpus.len(),
            class_histogram,
            expected_class_distribution: vocab
                .classes
                .iter()
                .zip(expected)
                .map(|(c, p)| (c.id.clone(), p))
                .collect(),
            census,
        })
    }
}

/// Gram-Schmidt on Gaussian columns; deterministic in `seed`.
fn orthonormal_embedding(rows: usize, cols: usize, gain: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
        // two passes keep the columns orthogonal to working precision
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= d * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (j, col) in basis.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            out[i * cols + j] = gain * x;
        }
    }
    out
}
