//! On-disk formats.
//!
//! Everything is JSON (documents) or JSON Lines (streams). Floats are written
//! with shortest round-trip formatting and parsed exactly, so a saved model
//! reloads bit for bit.
//!
//! A dataset is a directory holding `config.json` (the generator config, which
//! carries the vocabulary), `samples.jsonl` (one [`Scenario`] per line) and
//! `manifest.json`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::Pooling;
use crate::logic::LogicConfig;
use crate::model::LogicModel;
use crate::numeric::params::{Dims, Group, ParamStore};
use crate::scenario::{GeneratorConfig, Manifest, Scenario};
use crate::trainer::{EpochRecord, TrainConfig};
use crate::vocab::Vocabulary;

pub const CHECKPOINT_VERSION: u32 = 1;

pub const DATASET_CONFIG: &str = "config.json";
pub const DATASET_SAMPLES: &str = "samples.jsonl";
pub const DATASET_MANIFEST: &str = "manifest.json";

/// One parameter array with its shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Summary of the training run that produced a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryDigest {
    pub epochs: usize,
    pub final_loss: f64,
    pub final_val_accuracy: Option<f64>,
    pub final_active_rules: usize,
    /// SHA-256 of the history as JSON Lines.
    pub sha256: String,
}

impl HistoryDigest {
    pub fn new(history: &[EpochRecord]) -> Result<Option<Self>> {
        let Some(last) = history.last() else {
            return Ok(None);
        };
        let mut bytes = Vec::new();
        write_jsonl_to(&mut bytes, history)?;
        Ok(Some(Self {
            epochs: history.len(),
            final_loss: last.loss.total,
            final_val_accuracy: last.val_accuracy,
            final_active_rules: last.active_rules,
            sha256: hex::encode(Sha256::digest(&bytes)),
        }))
    }
}

/// Self-describing model snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub vocabulary: Vocabulary,
    pub dims: Dims,
    pub logic: LogicConfig,
    pub pooling: Pooling,
    pub attribution_eps: f64,
    /// Full training configuration, when the model was trained here.
    pub training: Option<TrainConfig>,
    pub parameters: Vec<ParamRecord>,
    pub history: Option<HistoryDigest>,
    pub dataset: Option<DatasetRef>,
}

/// Where the training data came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    /// Hash of the generator config of the training data.
    pub config_hash: String,
    /// Dataset directory as given at training time.
    pub dir: Option<String>,
    /// Samples `[0, train_samples)` were used for fitting and the following
    /// `validation_samples` for validation.
    pub train_samples: usize,
    pub validation_samples: usize,
}

impl DatasetRef {
    pub fn validation<'a>(&self, samples: &'a [Scenario]) -> Result<&'a [Scenario]> {
        let end = self.train_samples + self.validation_samples;
        if end > samples.len() {
            return Err(Error::Config(format!(
                "dataset holds {} samples, the checkpoint used {end}",
                samples.len()
            )));
        }
        Ok(&samples[self.train_samples..end])
    }
}

impl Checkpoint {
    pub fn new(model: &LogicModel<f64>, vocabulary: &Vocabulary) -> Result<Self> {
        vocabulary.validate()?;
        if vocabulary.num_facts() != model.dims.facts || vocabulary.num_classes() != model.dims.classes {
            return Err(Error::Config("vocabulary does not match the model".into()));
        }
        Ok(Self {
            format_version: CHECKPOINT_VERSION,
            vocabulary: vocabulary.clone(),
            dims: model.dims,
            logic: model.logic,
            pooling: model.pooling,
            attribution_eps: model.attribution_eps,
            training: None,
            parameters: model
                .params
                .iter()
                .map(|(g, p)| ParamRecord {
                    name: g.name().to_string(),
                    shape: p.shape.clone(),
                    values: p.value.clone(),
                })
                .collect(),
            history: None,
            dataset: None,
        })
    }

    pub fn with_training(mut self, config: TrainConfig, history: &[EpochRecord]) -> Result<Self> {
        self.training = Some(config);
        self.history = HistoryDigest::new(history)?;
        Ok(self)
    }

    pub fn with_dataset(mut self, dataset: DatasetRef) -> Self {
        self.dataset = Some(dataset);
        self
    }

    pub fn to_model(&self) -> Result<LogicModel<f64>> {
        check_version(self.format_version, CHECKPOINT_VERSION)?;
        self.vocabulary.validate()?;
        let mut values = Vec::with_capacity(self.parameters.len());
        for record in &self.parameters {
            let group = Group::from_name(&record.name)
                .ok_or_else(|| Error::Config(format!("unknown parameter group `{}`", record.name)))?;
            let want = self.dims.shape_of(group);
            if record.shape != want {
                return Err(Error::Config(format!(
                    "parameter `{}` has shape {:?}, expected {want:?}",
                    record.name, record.shape
                )));
            }
            values.push((group, record.values.clone()));
        }
        if values.len() != Group::ALL.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} parameter groups, expected {}",
                values.len(),
                Group::ALL.len()
            )));
        }
        let mut model = LogicModel::zeros(self.dims, self.logic)?;
        model.pooling = self.pooling;
        model.attribution_eps = self.attribution_eps;
        model.params = ParamStore::from_values(&self.dims, values)?;
        model.params.check_finite_values()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    /// Reads a checkpoint, rejecting other format versions before decoding
    /// the rest of the document.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Config("checkpoint has no format_version".into()))?;
        check_version(u32::try_from(found).unwrap_or(u32::MAX), CHECKPOINT_VERSION)?;
        Ok(serde_json::from_value(value)?)
    }
}

pub fn check_version(found: u32, expected: u32) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::FormatVersion { found, expected })
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let reader = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(reader)?)
}

pub fn write_jsonl_to<T: Serialize>(mut w: impl Write, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_jsonl_to(&mut w, records)?;
    w.flush()?;
    Ok(())
}

/// Reads one record per non-blank line; errors name the offending line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

/// A generated corpus with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: GeneratorConfig,
    pub manifest: Manifest,
    pub samples: Vec<Scenario>,
}

impl Dataset {
    pub fn vocabulary(&self) -> &Vocabulary {
        &self.config.vocabulary
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_json(dir.join(DATASET_CONFIG), &self.config)?;
        write_jsonl(dir.join(DATASET_SAMPLES), &self.samples)?;
        write_json(dir.join(DATASET_MANIFEST), &self.manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let config: GeneratorConfig = read_json(dir.join(DATASET_CONFIG))?;
        let manifest: Manifest = read_json(dir.join(DATASET_MANIFEST))?;
        let samples: Vec<Scenario> = read_jsonl(dir.join(DATASET_SAMPLES))?;
        config.vocabulary.validate()?;
        let n = config.vocabulary.num_facts();
        let c = config.vocabulary.num_classes();
        for s in &samples {
            if s.facts.len() != n {
                return Err(Error::shape(format!("facts of sample {}", s.id), n, s.facts.len()));
            }
            if s.label >= c {
                return Err(Error::ClassOutOfRange { index: s.label, classes: c });
            }
        }
        if manifest.count != samples.len() {
            return Err(Error::Config(format!(
                "manifest lists {} samples but {} were read",
                manifest.count,
                samples.len()
            )));
        }
        Ok(Self {
            config,
            manifest,
            samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::LogicConfig;
    use crate::model::InitConfig;
    use crate::scenario::GeneratorConfig;
    use rand::SeedableRng;

    fn trained_like() -> (LogicModel<f64>, Vocabulary, Vec<Scenario>) {
        let g = GeneratorConfig::clinic8().compile().unwrap();
        let dims = Dims {
            facts: 8,
            features: g.config().features,
            rules: 6,
            slots: 3,
            classes: 4,
        };
        let logic = LogicConfig {
            rules: 6,
            slots: 3,
            ..LogicConfig::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut model = LogicModel::init(dims, logic, &InitConfig::default(), &mut rng).unwrap();
        // awkward values that a lossy float format would perturb
        model.params.value_mut(Group::ClassBias)[0] = 0.1 + 0.2;
        model.params.value_mut(Group::ClassBias)[1] = f64::MIN_POSITIVE;
        model.params.value_mut(Group::ClassBias)[2] = -1.0 / 3.0;
        (model, g.vocabulary().clone(), g.generate(50))
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let (model, vocab, samples) = trained_like();
        let dir = tempdir();
        let path = dir.join("model.json");
        Checkpoint::new(&model, &vocab).unwrap().save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap().to_model().unwrap();
        assert_eq!(back.params, model.params);
        for s in &samples {
            let a = model.infer(&s.views).unwrap();
            let b = back.infer(&s.views).unwrap();
            for (x, y) in a.posterior.iter().zip(&b.posterior) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn unknown_version_rejected() {
        let (model, vocab, _) = trained_like();
        let mut ckpt = Checkpoint::new(&model, &vocab).unwrap();
        ckpt.format_version = 2;
        let text = serde_json::to_string(&ckpt).unwrap();
        assert!(matches!(
            Checkpoint::from_json(&text),
            Err(Error::FormatVersion { found: 2, expected: 1 })
        ));
        // also rejected before decoding an otherwise unreadable body
        assert!(matches!(
            Checkpoint::from_json(r#"{"format_version": 7, "whatever": true}"#),
            Err(Error::FormatVersion { found: 7, .. })
        ));
        assert!(Checkpoint::from_json(r#"{"dims": 1}"#).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (model, vocab, _) = trained_like();
        let mut ckpt = Checkpoint::new(&model, &vocab).unwrap();
        ckpt.parameters[0].shape = vec![1, 2];
        assert!(ckpt.to_model().is_err());
        let mut ckpt = Checkpoint::new(&model, &vocab).unwrap();
        ckpt.parameters.pop();
        assert!(ckpt.to_model().is_err());
    }

    #[test]
    fn dataset_roundtrip() {
        let g = GeneratorConfig::clinic8().compile().unwrap();
        let samples = g.generate(40);
        let ds = Dataset {
            config: g.config().clone(),
            manifest: g.manifest(&samples).unwrap(),
            samples,
        };
        let dir = tempdir();
        ds.save(&dir).unwrap();
        assert_eq!(Dataset::load(&dir).unwrap(), ds);
        let first = std::fs::read_to_string(dir.join(DATASET_SAMPLES)).unwrap();
        ds.save(&dir).unwrap();
        assert_eq!(std::fs::read_to_string(dir.join(DATASET_SAMPLES)).unwrap(), first);
    }

    #[test]
    fn jsonl_reports_bad_line() {
        let dir = tempdir();
        let path = dir.join("h.jsonl");
        std::fs::write(&path, "1\n\n2\nx\n").unwrap();
        let err = read_jsonl::<u32>(&path).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
    }

    fn tempdir() -> std::path::PathBuf {
        use std::sync::atomic::{AtomicUsize, Ordering};
        static NEXT: AtomicUsize = AtomicUsize::new(0);
        let dir = std::env::temp_dir().join(format!(
            "factlogic-io-{}-{}",
            std::process::id(),
            NEXT.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
