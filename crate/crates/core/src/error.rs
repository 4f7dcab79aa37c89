use std::path::PathBuf;

use thiserror::Error;
use xnlu_tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {component} is not finite")]
    Divergence {
        epoch: usize,
        batch: usize,
        component: &'static str,
    },
    #[error("sequence of {len} positions exceeds max_len {max_len}")]
    Length { len: usize, max_len: usize },
    #[error("{0}")]
    Value(String),
    #[error("{0}")]
    Usage(String),
    #[error("label maps differ: {0}")]
    LabelMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable, greppable identifier for the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "E_PARSE",
            Error::Io { .. } => "E_IO",
            Error::Config(_) => "E_CONFIG",
            Error::Checkpoint(_) => "E_CHECKPOINT",
            Error::Divergence { .. } => "E_DIVERGENCE",
            Error::Length { .. } => "E_LENGTH",
            Error::Value(_) => "E_VALUE",
            Error::Usage(_) => "E_USAGE",
            Error::LabelMismatch(_) => "E_LABEL_MISMATCH",
            Error::Tensor(_) => "E_TENSOR",
            Error::Json(_) => "E_JSON",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
