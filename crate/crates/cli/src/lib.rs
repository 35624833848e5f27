//! Command-line front end: CSV ingestion, estimation with bootstrap
//! standard errors, simulation studies and propensity-score stratification.

pub mod commands;
pub mod config;
pub mod ingest;
pub mod report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("value error at row {row}: {message}")]
    Value { row: usize, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
}

impl CliError {
    /// Process exit code: 1 configuration, 2 data, 3 estimation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Schema(_) | CliError::Value { .. } | CliError::Data(_) => 2,
            CliError::Estimation(_) => 3,
        }
    }
}

impl From<ivlate::Error> for CliError {
    fn from(e: ivlate::Error) -> Self {
        match e {
            ivlate::Error::InvalidSpec(m) | ivlate::Error::InvalidArgument(m) => CliError::Config(m),
            other => CliError::Estimation(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
