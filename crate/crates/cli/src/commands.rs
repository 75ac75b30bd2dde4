//! Subcommand implementations. Each returns the document it prints.

use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use factlogic::gradcheck::GradCheckCase;
use factlogic::io::{read_json, write_json, write_jsonl, Checkpoint, Dataset, DatasetRef};
use factlogic::metrics::{evaluate, EvalOptions, MetricsReport};
use factlogic::numeric::params::Group;
use factlogic::rules::{extract, extract_unvalidated, RuleSetDocument};
use factlogic::scenario::{GeneratorConfig, Manifest, Scenario};
use factlogic::split::{compositional_split, HoldoutSpec};
use factlogic::trainer::{train_with_classes, TrainConfig};
use factlogic::SearchOptions;
use serde::{Deserialize, Serialize};

use crate::cli::{
    Cli, Command, EvalArgs, ExplainArgs, GenerateArgs, GradcheckArgs, RulesArgs, ServeArgs, Subset, TrainArgs,
};
use crate::engine::{Engine, ExplanationPayload, InferRequest, Settings};
use crate::error::{CliError, CliResult, Context};
use crate::service::{parse_body, serve as serve_http};

/// Name of the built-in training configuration.
pub const REFERENCE_CONFIG: &str = "reference";
/// Time budget of counterfactual searches run from the command line.
const CLI_CF_BUDGET: Duration = Duration::from_secs(3600);

pub fn run(cli: Cli) -> CliResult<()> {
    let dir = cli.config_dir.as_deref();
    match cli.command {
        Command::Generate(a) => print(&generate(&a, dir)?, None),
        Command::Train(a) => print(&train(&a, dir)?, None),
        Command::Eval(a) => print(&eval(&a)?, a.out.as_deref()),
        Command::Rules(a) => print(&rules(&a)?, None),
        Command::Explain(a) => print(&explain(&a)?, a.out.as_deref()),
        Command::Serve(a) => serve(&a),
        Command::Gradcheck(a) => {
            let report = gradcheck(&a)?;
            print(&report, None)?;
            if report.failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::CheckFailed {
                    failed: report.failed.len(),
                    cases: report.cases,
                })
            }
        }
    }
}

/// Pretty JSON to `out`, or to stdout.
fn print<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(path) => write_json(path, value).context(format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, value)
                .map_err(|e| CliError::Invalid(format!("cannot serialise output: {e}")))?;
            writeln!(stdout).map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

/// Finds a config file as given, then under the config directory.
pub fn resolve_config(name: &str, config_dir: Option<&Path>) -> CliResult<PathBuf> {
    let direct = PathBuf::from(name);
    if direct.is_file() {
        return Ok(direct);
    }
    if let Some(dir) = config_dir {
        let candidate = dir.join(name);
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(CliError::Invalid(format!(
        "config `{name}` is neither a preset nor a file{}",
        config_dir.map_or(String::new(), |d| format!(" (also looked in {})", d.display()))
    )))
}

fn load_generator_config(name: &str, config_dir: Option<&Path>) -> CliResult<GeneratorConfig> {
    if let Ok(path) = resolve_config(name, config_dir) {
        return read_json(&path).context(format!("reading {}", path.display()));
    }
    GeneratorConfig::preset(name).ok_or_else(|| resolve_config(name, config_dir).unwrap_err())
}

fn load_train_config(name: &str, config_dir: Option<&Path>) -> CliResult<TrainConfig> {
    if let Ok(path) = resolve_config(name, config_dir) {
        return read_json(&path).context(format!("reading {}", path.display()));
    }
    if name == REFERENCE_CONFIG {
        return Ok(TrainConfig::reference());
    }
    Err(resolve_config(name, config_dir).unwrap_err())
}

fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    Dataset::load(dir).context(format!("reading dataset {}", dir.display()))
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).context(format!("reading checkpoint {}", path.display()))
}

fn same_vocabulary(ckpt: &Checkpoint, data: &Dataset) -> CliResult<()> {
    if &ckpt.vocabulary == data.vocabulary() {
        Ok(())
    } else {
        Err(CliError::VocabularyMismatch(
            "the dataset and the checkpoint use different vocabularies".into(),
        ))
    }
}

pub fn generate(args: &GenerateArgs, config_dir: Option<&Path>) -> CliResult<Manifest> {
    let mut config = load_generator_config(&args.config, config_dir)?;
    if let Some(seed) = args.seed {
        config = config.with_seed(seed);
    }
    if let Some(p) = args.occlusion {
        config = config.with_occlusion(p);
    }
    let generator = config.compile().context("compiling generator")?;
    let samples = generator.generate(args.count);
    let manifest = generator.manifest(&samples).context("building manifest")?;
    let dataset = Dataset {
        config,
        manifest: manifest.clone(),
        samples,
    };
    dataset
        .save(&args.out)
        .context(format!("writing dataset {}", args.out.display()))?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub epochs: usize,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub final_loss: f64,
    pub validation_accuracy: Option<f64>,
    pub active_rules: usize,
}

fn history_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("history.jsonl")
}

pub fn train(args: &TrainArgs, config_dir: Option<&Path>) -> CliResult<TrainSummary> {
    let dataset = load_dataset(&args.data)?;
    let mut config = load_train_config(&args.config, config_dir)?;
    if let Some(seed) = args.seed {
        config = config.with_seed(seed);
    }
    if let Some(epochs) = args.epochs {
        config = config.with_epochs(epochs);
    }
    if !(0.0..1.0).contains(&args.val_fraction) {
        return Err(CliError::Invalid("--val-fraction must lie in [0, 1)".into()));
    }
    let n = dataset.samples.len();
    let validation_samples = (n as f64 * args.val_fraction).round() as usize;
    let train_samples = n - validation_samples;
    let (train_set, val_set) = dataset.samples.split_at(train_samples);
    let vocab = dataset.vocabulary();
    let quiet = args.quiet;
    let outcome = train_with_classes(train_set, val_set, vocab.num_classes(), &config, |r| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  loss {:.4}  val acc {}  rules {}",
                r.epoch,
                r.loss.total,
                r.val_accuracy.map_or("-".into(), |a| format!("{a:.4}")),
                r.active_rules
            );
        }
        ControlFlow::Continue(())
    })
    .context("training")?;

    let history = args.history.clone().unwrap_or_else(|| history_path(&args.out));
    write_jsonl(&history, &outcome.history).context(format!("writing {}", history.display()))?;
    let dir = std::path::absolute(&args.data).unwrap_or_else(|_| args.data.clone());
    let checkpoint = Checkpoint::new(&outcome.model, vocab)
        .context("building checkpoint")?
        .with_training(config, &outcome.history)
        .context("digesting history")?
        .with_dataset(DatasetRef {
            config_hash: dataset.manifest.config_hash.clone(),
            dir: Some(dir.to_string_lossy().into_owned()),
            train_samples,
            validation_samples,
        });
    checkpoint
        .save(&args.out)
        .context(format!("writing {}", args.out.display()))?;
    // every save is verified by reloading
    let reloaded = load_checkpoint(&args.out)?.to_model().context("reloading checkpoint")?;
    for g in Group::ALL {
        let same = reloaded
            .params
            .value(g)
            .iter()
            .zip(outcome.model.params.value(g))
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(CliError::Invalid(format!("checkpoint round trip changed `{}`", g.name())));
        }
    }
    let last = outcome.history.last();
    Ok(TrainSummary {
        checkpoint: args.out.clone(),
        history,
        epochs: outcome.history.len(),
        train_samples,
        validation_samples,
        final_loss: last.map_or(f64::NAN, |r| r.loss.total),
        validation_accuracy: last.and_then(|r| r.val_accuracy),
        active_rules: last.map_or(0, |r| r.active_rules),
    })
}

/// The samples of `dataset` selected by `subset`, using the ranges recorded
/// in the checkpoint.
fn select<'a>(ckpt: &Checkpoint, dataset: &'a Dataset, subset: Subset) -> CliResult<&'a [Scenario]> {
    let samples = dataset.samples.as_slice();
    if subset == Subset::All {
        return Ok(samples);
    }
    let reference = ckpt
        .dataset
        .as_ref()
        .filter(|r| r.config_hash == dataset.manifest.config_hash)
        .ok_or_else(|| {
            CliError::Invalid(format!(
                "subset `{subset:?}` needs the dataset the checkpoint was trained on"
            ))
        })?;
    let train_end = reference.train_samples.min(samples.len());
    let val_end = (reference.train_samples + reference.validation_samples).min(samples.len());
    Ok(match subset {
        Subset::All => samples,
        Subset::Train => &samples[..train_end],
        Subset::Validation => &samples[train_end..val_end],
        Subset::Rest => &samples[val_end..],
    })
}

pub fn eval(args: &EvalArgs) -> CliResult<MetricsReport> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let model = ckpt.to_model().context("loading checkpoint")?;
    let dataset = load_dataset(&args.data)?;
    same_vocabulary(&ckpt, &dataset)?;
    let vocab = dataset.vocabulary();
    let samples = select(&ckpt, &dataset, args.subset)?;
    let counterfactual = args
        .counterfactual
        .then(|| SearchOptions::default().with_max_card(args.max_card).with_risk_classes(vocab.risk_classes()));
    let base = EvalOptions {
        compositional: None,
        counterfactual,
        counterfactual_limit: args.cf_limit,
        k: args.k,
    };
    let report = match &args.compositional {
        None => evaluate(&model, vocab, samples, &base),
        Some(spec) => {
            let spec: HoldoutSpec = spec.parse().context("parsing --compositional")?;
            let split = compositional_split(samples, &spec, vocab).context("splitting")?;
            // held-out patterns are scored against the in-distribution part
            evaluate(
                &model,
                vocab,
                &split.train,
                &EvalOptions {
                    compositional: Some((&split.test, &split.train)),
                    ..base
                },
            )
        }
    };
    report.context("evaluating")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RulesSummary {
    pub out: PathBuf,
    pub rules: usize,
    pub validation_samples: usize,
    pub warnings: Vec<String>,
}

/// Validation samples for rule extraction: the checkpoint's validation range
/// when the data is its training set, otherwise every sample.
fn rule_validation(ckpt: &Checkpoint, data: Option<&Path>) -> CliResult<Option<Vec<Scenario>>> {
    let recorded = ckpt.dataset.as_ref();
    let dir = match (data, recorded.and_then(|r| r.dir.as_deref())) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) if Path::new(d).is_dir() => PathBuf::from(d),
        _ => return Ok(None),
    };
    let dataset = load_dataset(&dir)?;
    same_vocabulary(ckpt, &dataset)?;
    match recorded.filter(|r| r.config_hash == dataset.manifest.config_hash) {
        Some(r) if r.validation_samples > 0 => Ok(Some(
            r.validation(&dataset.samples).context("selecting validation samples")?.to_vec(),
        )),
        _ if data.is_some() => Ok(Some(dataset.samples)),
        _ => Ok(None),
    }
}

pub fn rules(args: &RulesArgs) -> CliResult<RulesSummary> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let model = ckpt.to_model().context("loading checkpoint")?;
    let mut config = ckpt.training.as_ref().map(|t| t.prune).unwrap_or_default();
    if let Some(x) = args.tau_prune {
        config.tau_prune = x;
    }
    if let Some(x) = args.rho_min {
        config.rho_min = x;
    }
    if let Some(x) = args.w_min {
        config.w_min = x;
    }
    let set = match rule_validation(&ckpt, args.data.as_deref())? {
        Some(samples) if !samples.is_empty() => {
            let views: Vec<&[Vec<f64>]> = samples.iter().map(|s| s.views.as_slice()).collect();
            let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
            extract(&model, &views, &labels, &config)
        }
        _ => extract_unvalidated(&model, &config),
    }
    .context("extracting rules")?;
    let doc = RuleSetDocument::new(&set, &ckpt.vocabulary).context("exporting rules")?;
    write_json(&args.out, &doc).context(format!("writing {}", args.out.display()))?;
    Ok(RulesSummary {
        out: args.out.clone(),
        rules: doc.rules.len(),
        validation_samples: doc.validation_samples,
        warnings: doc.warnings,
    })
}

fn load_rules(path: &Path) -> CliResult<RuleSetDocument> {
    read_json(path).context(format!("reading rule set {}", path.display()))
}

pub fn explain(args: &ExplainArgs) -> CliResult<ExplanationPayload> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let document = args.rules.as_deref().map(load_rules).transpose()?;
    let settings = Settings {
        mode: args.mode,
        top_k: args.top_k,
        max_card: args.max_card,
        cf_budget: CLI_CF_BUDGET,
        force_exact: args.exact_cf,
    };
    let engine = Engine::new(&ckpt, document, settings)?;
    let body = std::fs::read(&args.sample).map_err(|e| CliError::io(&args.sample, e))?;
    let mut request: InferRequest = parse_body(&body)?;
    if args.exact_cf {
        request.counterfactual.exact = Some(true);
    }
    Ok(engine.explain(&request)?)
}

pub fn serve(args: &ServeArgs) -> CliResult<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let document = load_rules(&args.rules)?;
    let settings = Settings {
        mode: args.mode,
        top_k: args.top_k,
        max_card: args.max_card,
        cf_budget: Duration::from_millis(args.cf_budget_ms),
        force_exact: false,
    };
    let engine = Arc::new(Engine::new(&ckpt, Some(document), settings)?);
    let addr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::Invalid(format!("bad listen address: {e}")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Service(e.to_string()))?;
    runtime.block_on(serve_http(engine, addr, |local| {
        println!("{}", serde_json::json!({ "listening": local.to_string() }));
        let _ = std::io::stdout().flush();
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: Group,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSummary {
    pub cases: usize,
    pub h: f64,
    pub tol: f64,
    pub max_rel_error: f64,
    /// Worst relative error per parameter group over all cases.
    pub groups: Vec<GroupSummary>,
    /// Seeds of failing cases.
    pub failed: Vec<u64>,
}

pub fn gradcheck(args: &GradcheckArgs) -> CliResult<GradcheckSummary> {
    let mut groups: Vec<GroupSummary> = Group::ALL
        .iter()
        .map(|&group| GroupSummary {
            group,
            max_rel_error: 0.0,
        })
        .collect();
    let mut failed = Vec::new();
    for seed in args.seed..args.seed + args.cases {
        let case = GradCheckCase::random(seed).context(format!("building case {seed}"))?;
        let report = case.check(args.h, args.tol).context(format!("checking case {seed}"))?;
        for g in &report.groups {
            if let Some(s) = groups.iter_mut().find(|s| s.group == g.group) {
                s.max_rel_error = s.max_rel_error.max(g.max_rel_error);
            }
        }
        if !report.passed {
            failed.push(seed);
        }
    }
    Ok(GradcheckSummary {
        cases: args.cases as usize,
        h: args.h,
        tol: args.tol,
        max_rel_error: groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max),
        groups,
        failed,
    })
}
