use thiserror::Error;

use crate::domain::{TaskId, UavId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("clamp argument must be positive and finite, got {0}")]
    InvalidClampArgument(f64),

    #[error("resource vector length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("member set is empty")]
    EmptyMembers,

    #[error("requirement vector has no positive component")]
    EmptyRequirement,

    #[error("coalition for task {task} reported zero total effective contribution")]
    DegenerateCoalition { task: TaskId },

    #[error("no contribution report for coalition member {0}")]
    MissingReport(UavId),

    #[error("unknown UAV id {0}")]
    UnknownUav(UavId),

    #[error("index {index} out of range for {len} relays")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("channel state is malformed: {0}")]
    InvalidChannel(String),

    #[error("grid oracle supports at most {max} relays, got {size}")]
    OracleTooLarge { size: usize, max: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
