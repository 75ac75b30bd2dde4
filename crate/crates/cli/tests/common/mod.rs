//! Shared fixtures: a hand-built model that applies the generator's rules.

#![allow(dead_code)]

use factlogic::io::Checkpoint;
use factlogic::logic::LogicConfig;
use factlogic::model::{InitConfig, LogicModel};
use factlogic::numeric::params::{Dims, Group};
use factlogic::oracle::oracle_model;
use factlogic::rules::{extract, PruneConfig, RuleSetDocument};
use factlogic::scenario::{Generator, GeneratorConfig};
use factlogic::vocab::{ClassDescriptor, FactDescriptor, Vocabulary};
use rand::SeedableRng;

pub struct Fixture {
    pub generator: Generator,
    pub checkpoint: Checkpoint,
    pub rules: RuleSetDocument,
}

/// rail_down, edge_sitting, on_bed: the unattended exit pattern.
pub const EXIT_VECTOR: [f64; 8] = [1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];

pub fn oracle() -> Fixture {
    let generator = GeneratorConfig::clinic8().compile().unwrap();
    let model = oracle_model::<f64>(&generator, LogicConfig::default()).unwrap();
    let val = generator.generate_range(10_000, 400);
    let views: Vec<&[Vec<f64>]> = val.iter().map(|s| s.views.as_slice()).collect();
    let labels: Vec<usize> = val.iter().map(|s| s.label).collect();
    let set = extract(&model, &views, &labels, &PruneConfig::default()).unwrap();
    let vocab = generator.vocabulary().clone();
    Fixture {
        checkpoint: Checkpoint::new(&model, &vocab).unwrap(),
        rules: RuleSetDocument::new(&set, &vocab).unwrap(),
        generator,
    }
}

/// Two-class model over 20 facts whose prediction no intervention changes.
pub fn inert_wide() -> Checkpoint {
    let fact = |i: usize| FactDescriptor {
        id: format!("f{i}"),
        label: String::new(),
    };
    let class = |id: &str, risk| ClassDescriptor {
        id: id.into(),
        label: String::new(),
        risk,
    };
    let vocab = Vocabulary::new((0..20).map(fact).collect(), vec![class("calm", false), class("alarm", true)]).unwrap();
    let dims = Dims {
        facts: 20,
        features: 4,
        rules: 3,
        slots: 2,
        classes: 2,
    };
    let logic = LogicConfig {
        rules: 3,
        slots: 2,
        ..LogicConfig::default()
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut model = LogicModel::<f64>::init(dims, logic, &InitConfig::default(), &mut rng).unwrap();
    model.params.value_mut(Group::RuleWeight).fill(0.0);
    model.params.value_mut(Group::ClassBias).copy_from_slice(&[0.0, 1.0]);
    Checkpoint::new(&model, &vocab).unwrap()
}
