use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = OmerfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OmerfError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("{0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Optimizer gave up. `loglik` is the best value seen so callers can inspect it.
    #[error("{context}: no convergence (best log-likelihood {loglik:.6})")]
    Convergence { context: String, loglik: f64 },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl OmerfError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OmerfError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        OmerfError::Validation(msg.into())
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        OmerfError::Dimension(msg.into())
    }

    /// Attach an outer context string, e.g. the OMERF iteration that failed.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            OmerfError::Convergence { context, loglik } => OmerfError::Convergence {
                context: format!("{ctx}: {context}"),
                loglik,
            },
            OmerfError::Validation(m) => OmerfError::Validation(format!("{ctx}: {m}")),
            other => other,
        }
    }
}
