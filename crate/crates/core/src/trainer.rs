//! Two-phase training.
//!
//! Phase 1 (perception warmup) fits only the fusion heads on the fact
//! grounding loss; the rule layer is frozen and untouched. Phase 2 trains
//! everything on the joint objective while the Gumbel temperature anneals and
//! the sparsity weight ramps up.

use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::Pooling;
use crate::logic::LogicConfig;
use crate::loss::{LossBreakdown, LossWeights, SparsityForm};
use crate::metrics::{fact_accuracy, predict};
use crate::model::{Example, InitConfig, LogicModel, SelectionDraw};
use crate::numeric::optim::{AdamW, LrSchedule, OptimConfig};
use crate::numeric::params::{Dims, Group};
use crate::rules::{extract_from_confidences, PruneConfig};
use crate::scenario::Scenario;

/// Which samples carry fact labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Supervision {
    /// Every sample.
    #[default]
    Full,
    /// None; only class labels are used.
    Weak,
    /// A seeded random fraction of samples.
    Semi { fraction: f64 },
}

impl Supervision {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Supervision::Semi { fraction } if !(fraction > 0.0 && fraction < 1.0) => {
                Err(Error::Config("semi-supervised fraction must lie in (0, 1)".into()))
            }
            _ => Ok(()),
        }
    }

    /// Per-sample fact-label mask (`true` = labelled).
    pub fn mask<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Vec<bool> {
        match *self {
            Supervision::Full => vec![true; samples],
            Supervision::Weak => vec![false; samples],
            Supervision::Semi { fraction } => (0..samples).map(|_| rng.random_bool(fraction)).collect(),
        }
    }
}

/// Sparsity weight: 0 before `start_epoch`, then a linear ramp reaching `max`
/// after `ramp_epochs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsitySchedule {
    pub start_epoch: usize,
    pub ramp_epochs: usize,
    pub max: f64,
}

impl Default for SparsitySchedule {
    fn default() -> Self {
        Self {
            start_epoch: 20,
            ramp_epochs: 20,
            max: 0.01,
        }
    }
}

impl SparsitySchedule {
    /// Weight during 0-based `epoch`.
    pub fn at(&self, epoch: usize) -> f64 {
        if epoch < self.start_epoch {
            return 0.0;
        }
        if self.ramp_epochs == 0 {
            return self.max;
        }
        let done = (epoch - self.start_epoch + 1) as f64 / self.ramp_epochs as f64;
        self.max * done.min(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub fact_weight: f64,
    pub sparsity: SparsitySchedule,
    #[serde(default)]
    pub sparsity_form: SparsityForm,
    #[serde(default)]
    pub supervision: Supervision,
    /// Reserved calibration term; it has no definition yet and must stay 0.
    #[serde(default)]
    pub calibration_weight: f64,
    pub clip: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            fact_weight: 1.0,
            sparsity: SparsitySchedule::default(),
            sparsity_form: SparsityForm::Entropy,
            supervision: Supervision::Full,
            calibration_weight: 0.0,
            clip: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fact_weight >= 0.0 && self.sparsity.max >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.calibration_weight != 0.0 {
            return Err(Error::Config("the calibration term is not implemented; keep its weight at 0".into()));
        }
        if !(self.clip > 0.0 && self.clip < 0.5) {
            return Err(Error::Config("BCE clip must lie in (0, 0.5)".into()));
        }
        self.supervision.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Leading epochs of perception-only training.
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub logic: LogicConfig,
    pub init: InitConfig,
    #[serde(default)]
    pub pooling: Pooling,
    pub prune: PruneConfig,
    /// Straight-through hard selections during training.
    #[serde(default)]
    pub train_hard: bool,
    /// Training samples scored each epoch for the history (0 disables).
    pub monitor_samples: usize,
    /// Project rule weights onto `w >= 0` after every step, so rules can only
    /// vote for classes.
    #[serde(default)]
    pub nonnegative_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 100,
            warmup_epochs: 5,
            batch_size: 32,
            optim: OptimConfig::default(),
            loss: LossConfig::default(),
            logic: LogicConfig::default(),
            init: InitConfig::default(),
            pooling: Pooling::Reliability,
            prune: PruneConfig::default(),
            train_hard: false,
            monitor_samples: 1000,
            nonnegative_weights: false,
        }
    }
}

impl TrainConfig {
    /// Settings tuned for the `clinic-8` scenario.
    pub fn reference() -> Self {
        let mut c = Self::default();
        c.optim.schedule = LrSchedule {
            base_lr: REFERENCE_LR,
            warmup_epochs: 5.0,
            total_epochs: c.epochs as f64,
        };
        c
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Sets the epoch count and stretches the learning-rate schedule to match.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self.optim.schedule.total_epochs = epochs as f64;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config("warmup must leave at least one joint epoch".into()));
        }
        if !(self.optim.schedule.base_lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        self.logic.temperature.validate()?;
        self.prune.validate()?;
        self.loss.validate()
    }
}

/// Peak learning rate of [`TrainConfig::reference`].
pub const REFERENCE_LR: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Joint,
}

/// Mean loss components over an epoch's steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub total: f64,
    pub ce: f64,
    /// Absent when no sample of the epoch carried fact labels.
    pub fact: Option<f64>,
    pub sparsity: f64,
}

/// One line of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    pub temperature: f64,
    pub sparsity_weight: f64,
    pub loss: LossSummary,
    pub train_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub val_fact_accuracy: Option<f64>,
    /// Rules surviving extraction at the configured thresholds.
    pub active_rules: usize,
    pub active_rules_per_class: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: LogicModel<f64>,
    pub history: Vec<EpochRecord>,
}

/// Gumbel temperature at a point of the joint phase.
fn temperature_at(config: &TrainConfig, epoch_progress: f64) -> f64 {
    let joint = (config.epochs - config.warmup_epochs) as f64;
    let progress = (epoch_progress - config.warmup_epochs as f64) / joint;
    config.logic.temperature.at(progress)
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn train(train_set: &[Scenario], val_set: &[Scenario], config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(train_set, val_set, config, |_| ControlFlow::Continue(()))
}

/// Trains a fresh model, calling `on_epoch` after every epoch; returning
/// `Break` stops training after that epoch.
pub fn train_with(
    train_set: &[Scenario],
    val_set: &[Scenario],
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    let classes = train_set.iter().chain(val_set).map(|s| s.label).max().unwrap_or(0) + 1;
    train_with_classes(train_set, val_set, classes, config, on_epoch)
}

/// [`train_with`] for a known class count, which may exceed the largest label.
pub fn train_with_classes(
    train_set: &[Scenario],
    val_set: &[Scenario],
    classes: usize,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let first = train_set.first().ok_or(Error::EmptyDataset)?;
    let dims = Dims {
        facts: first.facts.len(),
        features: first.views.first().map_or(0, Vec::len),
        rules: config.logic.rules,
        slots: config.logic.slots,
        classes: classes.max(2),
    };
    let mut model = LogicModel::init(dims, config.logic, &config.init, &mut stream(config.seed, 1))?;
    model.pooling = config.pooling;
    let history = fit(&mut model, train_set, val_set, config, &mut on_epoch)?;
    Ok(TrainOutcome { model, history })
}

/// Trains `model` in place; its dimensions fix the class count.
pub fn fit(
    model: &mut LogicModel<f64>,
    train_set: &[Scenario],
    val_set: &[Scenario],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dims = model.dims;
    for s in train_set.iter().chain(val_set) {
        if s.facts.len() != dims.facts {
            return Err(Error::shape("sample facts", dims.facts, s.facts.len()));
        }
        if s.label >= dims.classes {
            return Err(Error::ClassOutOfRange {
                index: s.label,
                classes: dims.classes,
            });
        }
    }
    let fact_labels: Vec<Vec<f64>> = train_set.iter().map(Scenario::fact_labels).collect();
    let labelled = config.loss.supervision.mask(train_set.len(), &mut stream(config.seed, 2));
    let mut shuffle_rng = stream(config.seed, 3);
    let mut noise_rng = stream(config.seed, 4);

    let steps_per_epoch = train_set.len().div_ceil(config.batch_size);
    let mut optim = AdamW::new(config.optim, &model.params, steps_per_epoch);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let monitor = &train_set[..config.monitor_samples.min(train_set.len())];
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let phase = if epoch < config.warmup_epochs {
            Phase::Warmup
        } else {
            Phase::Joint
        };
        let sparse = match phase {
            Phase::Warmup => 0.0,
            Phase::Joint => config.loss.sparsity.at(epoch),
        };
        let weights = match phase {
            Phase::Warmup => LossWeights::zero().with_fact(config.loss.fact_weight),
            Phase::Joint => LossWeights {
                sparsity_form: config.loss.sparsity_form,
                clip: config.loss.clip,
                ..LossWeights::default()
            }
            .with_fact(config.loss.fact_weight)
            .with_sparse(sparse),
        };
        order.shuffle(&mut shuffle_rng);

        let mut sums = [0.0; 4];
        let mut fact_steps = 0usize;
        let mut lr = 0.0;
        let mut temperature = temperature_at(config, epoch as f64);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Example<'_, f64>> = chunk
                .iter()
                .map(|&i| Example {
                    views: &train_set[i].views,
                    label: train_set[i].label,
                    fact_labels: labelled[i].then(|| fact_labels[i].as_slice()),
                })
                .collect();
            if phase == Phase::Warmup && batch.iter().all(|e| e.fact_labels.is_none()) {
                // nothing to fit; keep the schedule moving
                optim.step += 1;
                continue;
            }
            temperature = temperature_at(config, epoch as f64 + step as f64 / steps_per_epoch as f64);
            let draw = match phase {
                Phase::Warmup => SelectionDraw::deterministic(temperature),
                Phase::Joint => SelectionDraw::sampled(&dims, temperature, config.train_hard, &mut noise_rng),
            };
            let out = model.forward_backward(&batch, &weights, &draw)?;
            check_finite(&out, model, epoch, step)?;
            lr = match phase {
                Phase::Warmup => optim.step(&mut model.params, Group::is_perception)?,
                Phase::Joint => optim.step(&mut model.params, |_| true)?,
            };
            if config.nonnegative_weights {
                for w in model.params.value_mut(Group::RuleWeight) {
                    *w = w.max(0.0);
                }
            }
            sums[0] += out.total;
            sums[1] += out.ce;
            sums[3] += out.sparsity;
            if let Some(f) = out.fact {
                sums[2] += f;
                fact_steps += 1;
            }
        }
        let steps = steps_per_epoch as f64;
        let loss = LossSummary {
            total: sums[0] / steps,
            ce: sums[1] / steps,
            fact: (fact_steps > 0).then(|| sums[2] / fact_steps as f64),
            sparsity: sums[3] / steps,
        };
        let record = epoch_record(model, config, monitor, val_set, epoch, phase, lr, temperature, sparse, loss)?;
        let flow = on_epoch(&record);
        history.push(record);
        if flow.is_break() {
            break;
        }
    }
    Ok(history)
}

fn check_finite(out: &LossBreakdown<f64>, model: &LogicModel<f64>, epoch: usize, step: usize) -> Result<()> {
    if out.total.is_finite() {
        return Ok(());
    }
    let norms: Vec<String> = model
        .params
        .iter()
        .map(|(g, p)| {
            let norm = p.value.iter().map(|x| x * x).sum::<f64>().sqrt();
            format!("{}={norm:.3e}", g.name())
        })
        .collect();
    Err(Error::NonFinite(format!(
        "loss at epoch {epoch} step {step} (ce {}, fact {:?}, sparsity {}; parameter norms {})",
        out.ce,
        out.fact,
        out.sparsity,
        norms.join(", ")
    )))
}

#[allow(clippy::too_many_arguments)]
fn epoch_record(
    model: &LogicModel<f64>,
    config: &TrainConfig,
    monitor: &[Scenario],
    val_set: &[Scenario],
    epoch: usize,
    phase: Phase,
    lr: f64,
    temperature: f64,
    sparsity_weight: f64,
    loss: LossSummary,
) -> Result<EpochRecord> {
    let accuracy = |posteriors: &[Vec<f64>], samples: &[Scenario]| {
        let hits = posteriors
            .iter()
            .zip(samples)
            .filter(|(p, s)| crate::numeric::ops::argmax(p) == s.label)
            .count();
        hits as f64 / samples.len() as f64
    };
    let train_accuracy = if monitor.is_empty() {
        None
    } else {
        Some(accuracy(&predict(model, monitor)?.posteriors, monitor))
    };
    // rules are counted against validation evidence, or training if none
    let (evidence, val_accuracy, val_fact_accuracy) = if val_set.is_empty() {
        (predict(model, monitor)?, None, None)
    } else {
        let p = predict(model, val_set)?;
        let acc = accuracy(&p.posteriors, val_set);
        let facts = fact_accuracy(&p.confidences, val_set);
        (p, Some(acc), facts)
    };
    let evidence_set = if val_set.is_empty() { monitor } else { val_set };
    let (active_rules, active_rules_per_class) = if evidence_set.is_empty() {
        (0, vec![0; model.dims.classes])
    } else {
        let labels: Vec<usize> = evidence_set.iter().map(|s| s.label).collect();
        let set = extract_from_confidences(model, &evidence.confidences, &labels, &config.prune)?;
        let per_class = (0..model.dims.classes).map(|c| set.count_for_class(c)).collect();
        (set.len(), per_class)
    };
    Ok(EpochRecord {
        epoch,
        phase,
        lr,
        temperature,
        sparsity_weight,
        loss,
        train_accuracy,
        val_accuracy,
        val_fact_accuracy,
        active_rules,
        active_rules_per_class,
    })
}
