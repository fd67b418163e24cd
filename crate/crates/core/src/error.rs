use std::io;

use thiserror::Error;

use crate::model::Entity;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("line {line}: rating {value} is not finite")]
    NonFiniteRating { line: usize, value: f64 },

    #[error("input contains no ratings")]
    EmptyInput,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index out of range: {what} {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dense oracle size {size} exceeds cap {cap}")]
    OracleCapExceeded { size: usize, cap: usize },

    #[error("non-finite value during conjugate gradient on {entity}")]
    NonFiniteCg { entity: Entity },

    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("block task failed on entity index {index}: {reason}")]
    BlockTask { index: usize, reason: String },

    #[error("outputs differ across thread counts ({baseline} vs {other} threads)")]
    ThreadMismatch { baseline: usize, other: usize },

    #[error("invalid snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
