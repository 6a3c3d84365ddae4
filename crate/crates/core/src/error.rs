use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A task family specification violates one of its own inequalities.
    #[error("infeasible task family: {0}")]
    InfeasibleFamily(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite parameter entry in {0}")]
    NonFinite(&'static str),

    /// The inner loop produced a non-finite iterate.
    #[error("inner loop diverged at step {step} (task {task_id})")]
    Diverged { task_id: u64, step: usize },

    #[error("trace does not belong to this task: {0}")]
    TraceMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("finite-difference oracle failed: {0}")]
    Oracle(Box<Error>),

    #[error("malformed task family document: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context,
                expected,
                actual,
            })
        }
    }
}
