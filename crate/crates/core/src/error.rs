use thiserror::Error;

/// Errors raised by the geometry, propagation and filter layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular metric: {0}")]
    SingularMetric(String),

    #[error("non-finite value in {stage} at step {step}")]
    Divergence { stage: &'static str, step: usize },

    #[error("ill-conditioned {what}: condition number {cond:.3e}")]
    IllConditioned { what: &'static str, cond: f64 },

    #[error("singular state: {0}")]
    SingularState(String),

    #[error("singular observation: {0}")]
    SingularObservation(String),

    #[error("domain error: {0}")]
    Domain(String),
}

impl FilterError {
    /// True for failures that come from floating-point breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            FilterError::Divergence { .. }
                | FilterError::IllConditioned { .. }
                | FilterError::SingularMetric(_)
                | FilterError::SingularState(_)
                | FilterError::SingularObservation(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, FilterError>;
