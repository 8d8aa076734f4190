use std::path::PathBuf;

use roughskew_core::Error as CoreError;
use thiserror::Error;

/// Exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit status for invalid configuration or arguments.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit status when a numerical routine failed.
pub const EXIT_NUMERICAL: i32 = 2;
/// Exit status when a selftest check failed.
pub const EXIT_SELFTEST: i32 = 3;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] CoreError),
    #[error("{failed} of {total} cells failed")]
    CellsFailed { failed: usize, total: usize },
    #[error("{failed} selftest checks failed")]
    Selftest { failed: usize },
    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        AppError::Config { field: field.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config { .. } => EXIT_VALIDATION,
            AppError::Model(e) => match e {
                CoreError::InvalidParameter { .. } | CoreError::BackendMismatch | CoreError::DegenerateModel(_) => {
                    EXIT_VALIDATION
                }
                _ => EXIT_NUMERICAL,
            },
            AppError::CellsFailed { .. } => EXIT_NUMERICAL,
            AppError::Selftest { .. } => EXIT_SELFTEST,
            AppError::Io { .. } | AppError::Format { .. } | AppError::ThreadPool(_) => EXIT_VALIDATION,
        }
    }
}
