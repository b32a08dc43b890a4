//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("invalid operation space: {0}")]
    OperationSpace(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("genotype schema error: {0}")]
    Schema(String),

    #[error("genotype parse error at line {line}, column {column}: {message}")]
    Parse {
        message: String,
        line: usize,
        column: usize,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty data stream: {0}")]
    EmptyData(String),

    #[error("idx format error: {0}")]
    Idx(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("autodiff error: {0}")]
    Autodiff(String),

    #[error("individual {0} has no fitness")]
    MissingFitness(usize),

    #[error("search failed in generation {generation}")]
    Generation {
        generation: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_generation(self, generation: usize) -> Self {
        match self {
            e @ Error::Generation { .. } => e,
            e => Error::Generation {
                generation,
                source: Box::new(e),
            },
        }
    }
}
