//! Experiment harness around `tree_shrink`: compressive-sensing recovery,
//! spiky-plus-Gaussian denoising, prior sampling and a fast self-check.
//!
//! Every command is a plain function returning a report, so the binary in
//! `main.rs` is only argument parsing and exit-code mapping.

mod check;
mod config;
mod experiment;
mod manifest;
mod prior;

pub use check::{cmd_check, CheckOptions, CheckReport, CheckRow, Fault};
pub use config::{BasisChoice, ModelChoice, RunConfig};
pub use experiment::{cmd_cs, cmd_denoise, spike_recall};
pub use manifest::{Command, Metrics, RunManifest};
pub use prior::{cmd_prior_sample, excess_kurtosis, PriorSampleConfig, PriorSampleReport};

use thiserror::Error;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "TREE_SHRINK_OUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: arguments, files, shapes. Exit code 1.
    #[error("{0}")]
    User(String),
    /// A self-check or an internal invariant failed. Exit code 2.
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl From<tree_shrink::Error> for CliError {
    fn from(e: tree_shrink::Error) -> Self {
        match e {
            tree_shrink::Error::InvalidState(_) => CliError::Internal(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::User(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
