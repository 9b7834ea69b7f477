use thiserror::Error;

/// Errors produced by the enhancement library.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value cannot be realized (bad preset, impossible filterbank, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// Caller supplied data that violates an operation's preconditions.
    #[error("input error: {0}")]
    Input(String),
    /// Tensor or buffer dimensions do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// An operation was invoked in the wrong order (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),
    /// A persisted weight or embedding file is malformed.
    #[error("format error: {0}")]
    Format(String),
    /// A computation produced non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
