use thiserror::Error;

/// Errors produced anywhere in the simulator, learners, or analysis code.
#[derive(Debug, Error)]
pub enum LeapError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("inconsistent evidence: {0}")]
    InconsistentEvidence(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LeapError>;

pub(crate) fn invalid(msg: impl Into<String>) -> LeapError {
    LeapError::InvalidArgument(msg.into())
}
