//! Differentiable rule learning over probabilistic facts fused from several
//! noisy, partially occluded views.
//!
//! The pipeline has two stages. [`fusion`] turns per-view features into fact
//! confidences with reliability-weighted logit pooling; [`logic`] composes
//! those confidences into soft conjunctive rules with learnable negation and
//! scores classes from the rule strengths. [`model`] chains both stages with
//! exact gradients, [`trainer`] fits them, [`rules`] extracts the symbolic
//! rule set and [`counterfactual`] searches for minimal fact interventions
//! that flip a prediction. [`scenario`] generates synthetic data with known
//! ground-truth rules.

pub mod counterfactual;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod io;
pub mod logic;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod rules;
pub mod scalar;
pub mod scenario;
pub mod split;
pub mod trainer;
pub mod vocab;

pub use counterfactual::{CounterfactualResult, Intervention, SearchOptions};
pub use error::{Error, Result};
pub use io::{Checkpoint, Dataset};
pub use rules::{RuleSet, RuleSetDocument};
pub use scalar::Real;
pub use vocab::Vocabulary;

/// Double precision model; used for training.
pub type Model = model::LogicModel<f64>;
/// Single precision model for inference.
pub type ModelF32 = model::LogicModel<f32>;
pub type FactGraph = fusion::FactGraph<f64>;
pub type Reasoner = logic::Reasoner<f64>;
pub type RuleActivation = logic::RuleActivation<f64>;
pub type ParamStore = numeric::params::ParamStore<f64>;
pub type LossBreakdown = loss::LossBreakdown<f64>;
pub type Inference = model::Inference<f64>;

