use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{what} = {got} exceeds the budget of {max}")]
    Budget {
        what: &'static str,
        got: usize,
        max: usize,
    },

    #[error("non-finite intermediate value in {0}")]
    NonFinite(&'static str),

    #[error("requested tolerance {requested:e} is below the oracle floor {floor:e}")]
    ToleranceRefused { requested: f64, floor: f64 },

    #[error("ambiguous reconstruction: {0}")]
    Ambiguous(String),

    #[error("reconstruction failed: {0}")]
    Failed(String),

    #[error("input is not {t}-gappy")]
    NotGappy { t: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        field,
        reason: reason.into(),
    }
}
