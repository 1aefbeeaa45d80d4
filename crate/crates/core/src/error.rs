use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate similarity matrix: total mass {0:e} is below threshold")]
    DegenerateSimilarity(f64),

    #[error("zero total weight mass in clustered layer")]
    ZeroMass,

    #[error("no gradient steps recorded")]
    EmptyAccumulator,

    #[error("circuit undefined for label {label}: baseline accuracy {baseline:.4} is below the minimum for a meaningful circuit")]
    CircuitUndefined { label: usize, baseline: f64 },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("required file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Problems with the user's configuration or inputs rather than with the computation.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::MissingFile(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }
}
