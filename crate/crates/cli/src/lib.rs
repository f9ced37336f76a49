//! Batch driver for the `sentfeed` toolkit: configuration, CSV ingestion,
//! synthetic data, the stage pipeline and its provenance manifest.

pub mod config;
pub mod ingest;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod synth;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{RunConfig, Stage};
pub use pipeline::{run_pipeline, RunOutcome};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{file}: row {row}: {msg}")]
    SchemaViolation { file: PathBuf, row: usize, msg: String },
    #[error("{file}: dates not strictly increasing at row {row}")]
    NonMonotoneDates { file: PathBuf, row: usize },
    #[error("stage `{stage}` requires stage `{missing}`, which is not in the stage list")]
    StageDependencyMissing { stage: Stage, missing: Stage },
    #[error("stage `{stage}` needs `{what}`, which is unavailable")]
    MissingUpstream { stage: Stage, what: String },
    #[error("stage `{stage}`: {msg}")]
    Stage { stage: Stage, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// Process exit status: 2 for bad configuration or input, 3 when a stage
    /// fails while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_)
            | CliError::SchemaViolation { .. }
            | CliError::NonMonotoneDates { .. }
            | CliError::StageDependencyMissing { .. } => 2,
            CliError::MissingUpstream { .. } | CliError::Stage { .. } | CliError::Io { .. } => 3,
        }
    }

    pub(crate) fn stage(stage: Stage, e: impl std::fmt::Display) -> Self {
        CliError::Stage { stage, msg: e.to_string() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}
