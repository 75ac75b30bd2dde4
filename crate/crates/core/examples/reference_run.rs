//! Trains on the `clinic-8` scenario and prints accuracy, extracted rules and
//! compositional generalization.
//!
//! `cargo run --release --example reference_run -- [seed] [epochs] [--full]`
//!
//! By default the run trains on the compositional holdout split; `--full`
//! trains on the whole distribution instead.

use std::ops::ControlFlow;

use factlogic::metrics::{evaluate, EvalOptions};
use factlogic::rules::{extract, render};
use factlogic::scenario::GeneratorConfig;
use factlogic::split::{compositional_split, HoldoutSpec};
use factlogic::trainer::{train_with, TrainConfig};

fn main() -> factlogic::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let full = args.iter().any(|a| a == "--full");
    let mut numbers = args.iter().filter_map(|a| a.parse::<u64>().ok());
    let seed = numbers.next().unwrap_or(0);
    let epochs = numbers.next().unwrap_or(100) as usize;

    let generator = GeneratorConfig::clinic8().with_seed(seed).compile()?;
    let vocab = generator.vocabulary();
    let corpus = generator.generate(7000);
    let split = compositional_split(&corpus, &HoldoutSpec::clinic8_default(), vocab)?;
    let pool = if full { &corpus } else { &split.train };
    let (train_set, val_set) = pool.split_at(5000);

    let config = TrainConfig::reference().with_seed(seed).with_epochs(epochs);
    let start = std::time::Instant::now();
    let out = train_with(train_set, val_set, &config, |r| {
        if r.epoch % 10 == 9 {
            println!(
                "epoch {:3} lr {:.4} t {:.3} loss {:.4} val {:.4} facts {:.4} rules {:?}",
                r.epoch,
                r.lr,
                r.temperature,
                r.loss.total,
                r.val_accuracy.unwrap_or(f64::NAN),
                r.val_fact_accuracy.unwrap_or(f64::NAN),
                r.active_rules_per_class
            );
        }
        ControlFlow::Continue(())
    })?;
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());

    let options = EvalOptions {
        compositional: (!full).then_some((split.test.as_slice(), train_set)),
        ..EvalOptions::default()
    };
    let report = evaluate(&out.model, vocab, val_set, &options)?;
    println!(
        "val acc {:.4} facts {:?} cgs {:?} npr {:?}",
        report.accuracy, report.fact_accuracy, report.cgs, report.npr
    );

    let views: Vec<&[Vec<f64>]> = val_set.iter().map(|s| s.views.as_slice()).collect();
    let labels: Vec<usize> = val_set.iter().map(|s| s.label).collect();
    let rules = extract(&out.model, &views, &labels, &config.prune)?;
    for r in &rules.rules {
        println!("  {}  rho={:.3}", render(r, vocab)?, r.reliability.unwrap_or(0.0));
    }
    println!("per class {:?}", (0..4).map(|c| rules.count_for_class(c)).collect::<Vec<_>>());
    Ok(())
}
