use thiserror::Error;

use crate::event::{ItemId, UserId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid transition at t={time}: {reason}")]
    InvalidTransition { time: f64, reason: String },

    #[error("unknown user {0}")]
    UnknownUser(UserId),

    #[error("item {0} is not active")]
    InactiveItem(ItemId),

    #[error("event log is malformed: {0}")]
    MalformedLog(String),

    #[error("parse error in {file} row {row}, column `{column}`: {message}")]
    Parse { file: String, row: usize, column: String, message: String },

    #[error("schema error in {file}: {message}")]
    Schema { file: String, message: String },

    #[error("causality violation: {0}")]
    Causality(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("segments do not partition the window: {0}")]
    Partition(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("Hessian is singular (condition estimate {condition:.3e})")]
    SingularHessian { condition: f64 },

    #[error("Hessian is not negative definite on the estimated block")]
    NotNegativeDefinite,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("rescaled times are not strictly increasing at contribution {index}")]
    NonIncreasing { index: usize },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
