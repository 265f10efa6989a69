//! Commands behind the `dkbo` binary: seeded sweeps, interactive sessions,
//! diagnostics and reports. Each command returns an [`Outcome`] or a
//! [`CliError`]; the binary maps them to exit codes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
mod output;

use std::process::ExitCode;

pub use commands::{cmd_diagnose, cmd_report, cmd_run, cmd_suggest, cmd_tell, cmd_validate, OutputFormat};
pub use config::ExperimentConfig;

/// Version stamped into every CSV row and JSON document the CLI writes.
pub const OUTPUT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] dkbo::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Successful command result.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some runs failed; the rest completed and were aggregated.
    Partial {
        failed: usize,
        total: usize,
    },
}

impl Outcome {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Outcome::Success => ExitCode::SUCCESS,
            Outcome::Partial { .. } => ExitCode::from(2),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(1)
    }
}
