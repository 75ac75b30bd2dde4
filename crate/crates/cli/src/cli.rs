//! Command-line interface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::engine::{Mode, DEFAULT_MAX_CARD, DEFAULT_TOP_K};

/// Environment variable naming the default configuration directory.
pub const CONFIG_DIR_ENV: &str = "FACTLOGIC_CONFIG_DIR";

#[derive(Debug, Parser)]
#[command(name = "factlogic", version, about = "Learn, inspect and serve rule models over fused fact confidences")]
pub struct Cli {
    /// Directory searched for `--config` files not found as given.
    #[arg(long, global = true, env = CONFIG_DIR_ENV)]
    pub config_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with its manifest.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint plus per-epoch history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Extract and export the rule set of a checkpoint.
    Rules(RulesArgs),
    /// Explain one sample.
    Explain(ExplainArgs),
    /// Run the HTTP explanation service.
    Serve(ServeArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator config file, or a preset name (`clinic-8`).
    #[arg(long, default_value = "clinic-8")]
    pub config: String,
    #[arg(long)]
    pub count: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the occlusion probability.
    #[arg(long)]
    pub occlusion: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Training config file, or `reference`.
    #[arg(long, default_value = "reference")]
    pub config: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Fraction of the dataset, taken from the end, used for validation.
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    /// History path; defaults to the checkpoint path with `.history.jsonl`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Suppress progress lines on stderr.
    #[arg(long)]
    pub quiet: bool,
}

/// Which samples of a dataset to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    /// Every sample.
    #[default]
    All,
    /// The samples the checkpoint was fitted on.
    Train,
    /// The checkpoint's validation samples.
    Validation,
    /// Samples after the training and validation ranges.
    Rest,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Subset::All)]
    pub subset: Subset,
    /// Held-out fact patterns, e.g. `rail_down=1,edge_sitting=1;standing=1`.
    /// Matching samples are scored separately as compositional
    /// generalization.
    #[arg(long)]
    pub compositional: Option<String>,
    /// Also measure counterfactual validity on risk predictions.
    #[arg(long)]
    pub counterfactual: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_CARD)]
    pub max_card: usize,
    /// Evaluate counterfactuals on at most this many risk predictions.
    #[arg(long)]
    pub cf_limit: Option<usize>,
    /// Ranking depth of the recall/precision@k metrics.
    #[arg(long)]
    pub k: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RulesArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Validation data; defaults to the dataset recorded in the checkpoint.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub tau_prune: Option<f64>,
    #[arg(long)]
    pub rho_min: Option<f64>,
    #[arg(long)]
    pub w_min: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// JSON document with `confidences` or `views` (a dataset record works).
    #[arg(long)]
    pub sample: PathBuf,
    /// Exact counterfactual search even above the fact cap.
    #[arg(long)]
    pub exact_cf: bool,
    /// Rule set used for traces; extracted from the checkpoint if absent.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Model)]
    pub mode: Mode,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_CARD)]
    pub max_card: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub rules: PathBuf,
    #[arg(long)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// `rules` serves the rule set as a frozen classifier.
    #[arg(long, value_enum, default_value_t = Mode::Model)]
    pub mode: Mode,
    /// Time budget of one exact counterfactual search.
    #[arg(long, default_value_t = 2000)]
    pub cf_budget_ms: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_CARD)]
    pub max_card: usize,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// First case seed; cases use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub cases: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_line_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn documented_invocations_parse() {
        for line in [
            "factlogic generate --config clinic-8 --count 10 --out d",
            "factlogic train --data d --config reference --seed 3 --out m.json",
            "factlogic eval --ckpt m.json --data d --compositional rail_down=1,edge_sitting=1",
            "factlogic rules --ckpt m.json --tau-prune 0.5 --rho-min 0.1 --out r.json",
            "factlogic explain --ckpt m.json --sample s.json --exact-cf",
            "factlogic serve --ckpt m.json --rules r.json --port 8080",
            "factlogic gradcheck --seed 7",
        ] {
            Cli::try_parse_from(line.split_whitespace()).unwrap_or_else(|e| panic!("{line}: {e}"));
        }
    }
}
