use thiserror::Error;

/// Failures raised by tensor construction and graph operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension error: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value at element {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("{op}: invalid configuration: {detail}")]
    Config { op: &'static str, detail: String },
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(TensorError::Shape { op, detail: detail.into() })
}
