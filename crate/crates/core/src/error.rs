use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FuseError>;

#[derive(Debug, Error)]
pub enum FuseError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A data row that failed validation. Rows are numbered from 1, not
    /// counting the CSV header.
    #[error("{message} at row {row} (field `{field}`)")]
    Row {
        row: usize,
        field: String,
        message: String,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("registry mismatch: {0}")]
    Registry(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("not enough records in subset `{subset}` for class {class}: need {needed}, have {available}")]
    Understocked {
        subset: String,
        class: String,
        needed: usize,
        available: usize,
    },

    /// A tree, model or profile document that does not validate.
    #[error("invalid document at `{path}`: {message}")]
    Document { path: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl FuseError {
    pub(crate) fn row(row: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        FuseError::Row {
            row,
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn document(path: impl Into<String>, message: impl Into<String>) -> Self {
        FuseError::Document {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FuseError::Io {
            path: path.into(),
            source,
        }
    }
}
