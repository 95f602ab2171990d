use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GunError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GunError {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("batch normalization: {0}")]
    BatchNorm(String),

    #[error("non-finite value encountered at iteration {iteration} ({what})")]
    NonFinite { iteration: usize, what: String },

    #[error("empty curriculum stage for lambda {lambda}: {diagnostic}")]
    EmptyStage { lambda: f64, diagnostic: String },

    #[error("checkpoint: {field}: {reason}")]
    Checkpoint { field: String, reason: String },

    #[error("image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GunError {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        GunError::Shape {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn checkpoint(field: impl Into<String>, reason: impl Into<String>) -> Self {
        GunError::Checkpoint {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by the input data rather than by usage or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            GunError::Image { .. } | GunError::Checkpoint { .. } | GunError::Io(_) | GunError::EmptyStage { .. }
        )
    }
}
