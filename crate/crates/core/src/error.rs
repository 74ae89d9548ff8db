use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = RsmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RsmError {
    /// Operand shapes do not agree.
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A forward primitive produced NaN or infinity.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// Latent state diverged during the recurrence at the given outer step.
    #[error("latent state diverged at outer step {step}: {source}")]
    Diverged {
        step: usize,
        #[source]
        source: Box<RsmError>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training step {step}: {source}")]
    TrainStep {
        step: u64,
        #[source]
        source: Box<RsmError>,
    },
}

impl RsmError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        RsmError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RsmError::Io {
            path: path.into(),
            source,
        }
    }
}
