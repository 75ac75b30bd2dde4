//! Command errors and their exit codes.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | a check ran and failed (`gradcheck`) |
//! | 2 | invalid command line (reported by the argument parser) |
//! | 3 | invalid input: configuration, shapes, vocabulary mismatch |
//! | 4 | file system error |
//! | 5 | unreadable document or unsupported format version |
//! | 6 | numerical failure during training or inference |
//! | 7 | counterfactual search found nothing or ran out of time |
//! | 8 | the HTTP service could not start or failed while running |
//!
//! Errors are printed to stderr as one JSON object:
//! `{"error": {"kind": ..., "message": ..., "exit_code": ...}}`.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: factlogic::Error,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
    #[error("gradient check failed on {failed} of {cases} cases")]
    CheckFailed { failed: usize, cases: usize },
    #[error("service: {0}")]
    Service(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use factlogic::Error as E;
        match self {
            Self::CheckFailed { .. } => 1,
            Self::Invalid(_) | Self::VocabularyMismatch(_) => 3,
            Self::Io { .. } => 4,
            Self::Service(_) => 8,
            Self::Core { source, .. } => match source {
                E::Io(_) => 4,
                E::Json(_) | E::FormatVersion { .. } => 5,
                E::NonFinite(_) => 6,
                E::NoCounterfactual(_) | E::Timeout => 7,
                _ => 3,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            1 => "check_failed",
            3 => "invalid_input",
            4 => "io",
            5 => "format",
            6 => "numerical",
            7 => "counterfactual",
            8 => "service",
            _ => "error",
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            error: ErrorBody {
                kind: self.kind(),
                message: self.to_string(),
                exit_code: self.exit_code(),
            },
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: ErrorBody,
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub kind: &'static str,
    pub message: String,
    pub exit_code: u8,
}

/// Attaches what was being done to a core error.
pub trait Context<T> {
    fn context(self, what: impl Display) -> CliResult<T>;
}

impl<T> Context<T> for factlogic::Result<T> {
    fn context(self, what: impl Display) -> CliResult<T> {
        self.map_err(|source| CliError::Core {
            context: what.to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_error_class() {
        let core = |e| CliError::Core {
            context: "x".into(),
            source: e,
        };
        assert_eq!(core(factlogic::Error::Timeout).exit_code(), 7);
        assert_eq!(core(factlogic::Error::FormatVersion { found: 2, expected: 1 }).exit_code(), 5);
        assert_eq!(core(factlogic::Error::NonFinite("loss".into())).exit_code(), 6);
        assert_eq!(core(factlogic::Error::EmptyDataset).exit_code(), 3);
        assert_eq!(CliError::CheckFailed { failed: 1, cases: 2 }.exit_code(), 1);
        let json = serde_json::to_value(CliError::Invalid("bad".into()).report()).unwrap();
        assert_eq!(json["error"]["exit_code"], 3);
        assert_eq!(json["error"]["kind"], "invalid_input");
    }
}
