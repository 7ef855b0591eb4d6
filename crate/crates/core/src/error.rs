//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A computation produced a non-finite value. Overflow is reported, never
    /// silently clamped.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// Integration blew up; the step index locates the failure.
    #[error("integration produced non-finite state at step {step}")]
    IntegrationOverflow { step: usize },

    /// A batch operation failed on a specific row.
    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    /// Training aborted; carries the offending optimizer step.
    #[error("non-finite loss at optimizer step {step}")]
    TrainDiverged { step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed input data, located by line number where applicable.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("serialization: {0}")]
    Serialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn at_row(self, row: usize) -> Self {
        Error::Row {
            row,
            source: Box::new(self),
        }
    }
}
