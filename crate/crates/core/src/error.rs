use std::path::PathBuf;

use thiserror::Error;

use crate::simplex::LpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument fell outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// A scenario or record failed validation. `subject` names the offending
    /// household, region, or config section.
    #[error("invalid {subject}: field `{field}` {reason}")]
    Validation {
        subject: String,
        field: String,
        reason: String,
    },

    #[error("{file}:{line}: {message}")]
    Parse { file: PathBuf, line: u64, message: String },

    #[error("every household was excluded at ingestion")]
    EmptyScenario,

    #[error("savings fit failed for household {household}: {message}")]
    Fit { household: String, message: String },

    #[error("LP solve failed: {0}")]
    Lp(#[from] LpError),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(subject: impl Into<String>, field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            subject: subject.into(),
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
