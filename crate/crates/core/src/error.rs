use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OfdError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A welfare functional was evaluated outside its domain, e.g. Nash
    /// welfare on a non-positive utility.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("i/o failure: {0}")]
    Io(String),

    #[error("horizon mismatch: expected {expected} rounds, found {found}")]
    HorizonMismatch { expected: usize, found: usize },
}

pub type Result<T, E = OfdError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> OfdError {
    OfdError::InvalidArgument(msg.into())
}

impl From<std::io::Error> for OfdError {
    fn from(e: std::io::Error) -> Self {
        OfdError::Io(e.to_string())
    }
}

impl From<csv::Error> for OfdError {
    fn from(e: csv::Error) -> Self {
        OfdError::Io(e.to_string())
    }
}
