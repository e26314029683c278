use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("confusion matrix is singular (condition estimate {condition:.3e})")]
    SingularMatrix { condition: f64 },

    #[error("non-finite objective at iteration {iteration}: {detail}")]
    Numerical { iteration: usize, detail: String },

    #[error("row {row} has zero total weight after adaptation")]
    DegenerateRow { row: usize },

    #[error("class {class} has positive target prior but no examples to resample")]
    UnsatisfiableShift { class: usize },

    #[error("all differences are zero; the signed-rank test is undefined")]
    DegenerateSample,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration, as opposed to
    /// numerical failures during estimation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Parse { .. }
                | Error::Validation { .. }
                | Error::UnsatisfiableShift { .. }
                | Error::Io { .. }
                | Error::Json(_)
        )
    }
}
