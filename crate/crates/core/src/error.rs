use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("linear solve failed at time index {step}: {reason}")]
    LinearSolve { step: usize, reason: String },
    #[error("mass drift {drift:.3e} at time index {step} exceeds the abort threshold")]
    MassDrift { step: usize, drift: f64 },
    #[error("config error in {field}: {message}")]
    Config { field: String, message: String },
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }

    /// Validation failures map to exit code 2 in the CLI.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Invalid(_) | Error::Config { .. } | Error::File { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
