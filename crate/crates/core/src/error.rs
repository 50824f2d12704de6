use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("entry {index} = {value} is outside [0, 1] or not finite")]
    OutOfUnitInterval { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("{op}: domain violation at operand {value}")]
    Domain { op: &'static str, value: f64 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite surrogate value {value} while rounding entry {index}")]
    NonFiniteSurrogate { index: usize, value: f64 },

    #[error("non-finite loss {value} at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, value: f64 },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("serialization: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
