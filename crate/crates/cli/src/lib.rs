//! Command-line workflows and the HTTP explanation service for `factlogic`
//! models.
//!
//! The binary is a thin wrapper around [`commands::run`]; [`service::router`]
//! builds the HTTP application over an immutable [`engine::Engine`].

pub mod cli;
pub mod commands;
pub mod engine;
pub mod error;
pub mod service;

pub use error::{CliError, CliResult};
