//! Experiment driver: corpus generation, autoencoder training, drift
//! fine-tuning, online classification, the offline baseline, timing and
//! gradient checks. Every command writes CSV artifacts plus an entry in
//! `manifest.json` under the output directory.

pub mod commands;
pub mod corpus;
pub mod manifest;

use std::fmt::Display;
use std::path::Path;

pub use commands::ExperimentConfig;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn io(path: &Path, err: impl Display) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Check(_) => EXIT_CHECK,
        }
    }
}

impl From<streamtune::Error> for CliError {
    fn from(e: streamtune::Error) -> Self {
        match e {
            streamtune::Error::Convergence { .. } => CliError::Check(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}
