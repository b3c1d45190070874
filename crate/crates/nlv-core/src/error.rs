//! Error types shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NlvError>;

/// Errors produced by data ingestion, model compilation, fitting, and simulation.
#[derive(Debug, Error)]
pub enum NlvError {
    #[error("failed to read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in `{path}`: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: Box<csv::Error>,
    },

    #[error("schema error: column `{column}` not found in `{path}`")]
    MissingColumn { column: String, path: PathBuf },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("model spec parse error in `{path}`: {message}")]
    SpecParse { path: PathBuf, message: String },

    #[error("model spec error: {0}")]
    Spec(String),

    #[error("binding error: {0}")]
    Binding(String),

    #[error("scoring error: {0}")]
    Scoring(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("saturated model: fit indices are undefined for df = 0")]
    SaturatedModel,
}

impl NlvError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NlvError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        NlvError::Csv {
            path: path.into(),
            source: Box::new(source),
        }
    }
}
