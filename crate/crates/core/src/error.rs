use std::time::Duration;

/// Everything that can go wrong inside the solver stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A dual value left the effective domain of a loss conjugate.
    #[error("domain error: {0}")]
    Domain(String),

    /// Protocol or state-machine misuse (e.g. broadcasting twice without a gather).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("worker {worker} failed: {reason}")]
    WorkerFailed { worker: usize, reason: String },

    #[error("worker {worker} did not answer within {timeout:?}")]
    Timeout { worker: usize, timeout: Duration },

    #[error("codec: {0}")]
    Codec(String),

    /// Non-finite objective values or similar numerical breakdown.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
