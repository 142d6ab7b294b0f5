use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the incremental-learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected:?}, got {actual:?}")]
    InputShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("classifier head has no rows; extend it before computing logits")]
    UninitializedHead,

    #[error("label {label} outside head range 0..{classes}")]
    Label { label: usize, classes: usize },

    #[error("non-finite value encountered in {0}")]
    Numeric(&'static str),

    #[error("training diverged at task {task}, epoch {epoch}, batch {batch}")]
    Divergence {
        task: usize,
        epoch: usize,
        batch: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("current task holds no samples")]
    EmptyTask,

    #[error("target class {0} is not an old class")]
    Target(usize),

    #[error("oracle data unavailable for class {0}")]
    OracleUnavailable(usize),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
