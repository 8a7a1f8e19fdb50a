use std::path::PathBuf;

use fpscm_autograd::AutogradError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {context} at index {index}")]
    Numeric { context: String, index: usize },
    #[error("ordering violates edge {parent} -> {child}")]
    Ordering { parent: usize, child: usize },
    #[error("structure violation: {0}")]
    Structure(String),
    #[error("unsupported capability: {0}")]
    Capability(String),
    #[error("missing data: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Autograd(#[from] AutogradError),
}

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Self::Argument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
