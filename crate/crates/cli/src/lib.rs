//! Orchestration behind the `mctsep` binary: configuration, run artifacts
//! and one function per subcommand.

pub mod artifacts;
pub mod commands;
pub mod config;

use thiserror::Error;

pub use config::RunConfig;

/// A configuration value that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid configuration at `{field}`: {message}")]
pub struct ValidationError {
    /// Dotted path of the offending field, e.g. `search.gamma`.
    pub field: String,
    pub message: String,
}

/// Missing, unreadable or inconsistent input artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct DataError(pub String);

/// Process exit code classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Success = 0,
    Validation = 2,
    Data = 3,
    Runtime = 4,
}

impl ExitClass {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Maps an error chain onto its exit class.
pub fn classify(err: &anyhow::Error) -> ExitClass {
    for cause in err.chain() {
        if cause.is::<ValidationError>() || cause.is::<clap::Error>() {
            return ExitClass::Validation;
        }
        if cause.is::<DataError>() || cause.is::<mctsep::datasets::DatasetError>() {
            return ExitClass::Data;
        }
        if let Some(mctsep::training::TrainError::Data { .. }) = cause.downcast_ref() {
            return ExitClass::Data;
        }
        if let Some(mctsep::policy::PolicyError::Io(_) | mctsep::policy::PolicyError::Version { .. }) =
            cause.downcast_ref()
        {
            return ExitClass::Data;
        }
    }
    ExitClass::Runtime
}
