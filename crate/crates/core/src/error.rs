use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid control action: {0}")]
    InvalidAction(String),
    #[error("duplicate device id {0} in backlog")]
    DuplicateDevice(u64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("observation is inconsistent with every transmitter count in the search range")]
    InconsistentObservation,
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("stale label record for frame {record} (current frame {current})")]
    StaleRecord { record: u64, current: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }
}
