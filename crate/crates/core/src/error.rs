use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum CoreError {
    /// An input violated a shape or range precondition.
    #[error("rejected input: {0}")]
    RejectedInput(String),

    /// An API was used outside its contract (e.g. backward on a node that
    /// is not on the tape).
    #[error("usage error: {0}")]
    Usage(String),

    /// Wire-format parse failure; `offset` is the byte position at which
    /// decoding stopped.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Compressed stream could not be decoded.
    #[error("codec error: {0}")]
    Codec(String),

    /// Scenario generation could not satisfy its constraints.
    #[error("scenario generation failed: {0}")]
    ScenarioGeneration(String),

    /// Training aborted (non-finite loss).
    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    /// Missing or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn rejected(msg: impl Into<String>) -> Self {
        CoreError::RejectedInput(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CoreError::Usage(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }
}
