//! Simulation, filter execution and Monte Carlo benchmarking around the
//! `gi_filter` library, plus the checks exposed by the `gifilter` binary.

pub mod benchmark;
pub mod checks;
pub mod config;
pub mod output;
pub mod run;
pub mod scenario;
pub mod simulate;

use std::path::PathBuf;

use gi_filter::FilterError;
use thiserror::Error;

pub use benchmark::{run_benchmark, BenchmarkOutcome, BenchmarkSummary};
pub use config::{FilterKind, ScenarioConfig};
pub use run::{run_filters, FilterTrack, StepStatus};
pub use scenario::Scenario;
pub use simulate::{simulate_sde, Trajectory};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl HarnessError {
    /// Process exit status: 1 for bad input, 2 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Filter(e) if e.is_numerical() => 2,
            HarnessError::CheckFailed(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
