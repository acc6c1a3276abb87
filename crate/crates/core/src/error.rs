use std::path::PathBuf;

use avloc_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: u64, detail: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("checkpoint is missing parameter `{0}`")]
    MissingParameter(String),
    #[error("parameter `{name}` has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (seed {seed}): {detail}")]
    NonFinite { epoch: usize, batch: usize, seed: u64, detail: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status: 1 usage/config, 2 data or format, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 1,
            Error::Tensor(TensorError::NonFinite { .. }) | Error::NonFinite { .. } => 3,
            Error::Tensor(TensorError::Usage(_)) => 1,
            _ => 2,
        }
    }
}
