//! Independent oracles for the GI filter and the frozen fixtures they produce.

pub mod cases;
pub mod fixture;
pub mod oracle;
pub mod sample;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error(transparent)]
    Filter(#[from] gi_filter::FilterError),
    #[error(transparent)]
    Harness(#[from] gi_harness::HarnessError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("fixture format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("{0}")]
    Check(String),
}

pub type Result<T> = std::result::Result<T, ValidationError>;
