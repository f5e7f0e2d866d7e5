use std::path::PathBuf;

use ngo_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}: empty pose sequence")]
    EmptySequence(&'static str),
    #[error("{what}: length mismatch ({left} vs {right})")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("trajectory metrics: zero distance travelled")]
    ZeroDistance,
    #[error("maze: {0}")]
    Maze(String),
    #[error("pose ({x:.4}, {y:.4}) is inside a wall")]
    InsideWall { x: f64, y: f64 },
    #[error("invalid config `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed file: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("data pipeline: {0}")]
    Pipeline(String),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { key: key.into(), reason: reason.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
