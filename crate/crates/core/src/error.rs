use thiserror::Error;

/// Errors raised by the sampling core.
#[derive(Debug, Error)]
pub enum AbpError {
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-positive entry {value} at index {index}")]
    NonPositive { index: usize, value: f64 },

    #[error("numerical blowup at step {step} (t = {time}): {detail}")]
    Blowup { step: u64, time: f64, detail: String },

    #[error("estimator disabled: {0}")]
    Disabled(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),
}

impl AbpError {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        AbpError::Invalid { what, reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, AbpError>;
