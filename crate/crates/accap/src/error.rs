//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/matrix dimensions do not line up; the message names both shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    Arg(String),

    /// Named collections (parameters vs. gradients, checkpoint vs. corpus) disagree.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// A computation produced or detected a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A command was invoked before its prerequisite stage ran.
    #[error("missing dependency: {0}")]
    Dependency(String),

    /// Malformed or mismatched checkpoint data.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Malformed corpus file.
    #[error("corpus error: {0}")]
    CorpusFormat(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// An exhaustive search was refused because the space is too large.
    #[error("search space too large: {0}")]
    TooLarge(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
