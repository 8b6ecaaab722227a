use parelab_numerics::NumericsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid body model field `{field}`: {detail}")]
    Model { field: &'static str, detail: String },
    #[error("degenerate rotation: {0}")]
    DegenerateRotation(String),
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint config hash {found} does not match model config hash {expected}")]
    HashMismatch { expected: String, found: String },
    #[error("rank-deficient point set: {0}")]
    RankDeficient(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("png encoding: {0}")]
    Png(String),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) fn model_err(field: &'static str, detail: impl Into<String>) -> CoreError {
    CoreError::Model { field, detail: detail.into() }
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> CoreError {
    CoreError::Shape { op, detail: detail.into() }
}
