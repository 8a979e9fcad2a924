use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("malformed {file}: field `{field}`: {reason}")]
    Format {
        file: String,
        field: String,
        reason: String,
    },
    #[error("missing files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    Missing(Vec<PathBuf>),
    #[error("training did not reach held-out mIoU {target:.2} within {epochs} epochs (best {best:.3}); raise --max-epochs or the learning rate")]
    TrainingStalled { target: f64, epochs: usize, best: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(file: &str, field: &str, reason: impl Into<String>) -> Self {
        Error::Format {
            file: file.to_string(),
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by user-supplied configuration or inputs
    /// rather than by a failing computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Format { .. } | Error::Missing(_) | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
