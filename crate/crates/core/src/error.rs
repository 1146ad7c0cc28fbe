use thiserror::Error;

/// Errors raised by index construction, queries and the RL drivers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {index} has norm {norm}, expected unit norm")]
    NotUnitNorm { index: usize, norm: f64 },

    #[error("data vector {index} has norm {norm} > 1; scale the data set into the unit ball")]
    DataNormTooLarge { index: usize, norm: f64 },

    #[error("query norm {norm} exceeds bound D_x = {bound}; raise D_x")]
    QueryNormExceedsBound { norm: f64, bound: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty data set")]
    EmptyDataSet,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("query matrix is not positive semidefinite: {reason}")]
    NotPsd { reason: String },

    #[error("span matrix has numerical rank {rank}, expected {expected} linearly independent columns")]
    RankDeficient { rank: usize, expected: usize },

    #[error("index out of range: {what} = {value} (limit {limit})")]
    OutOfRange { what: &'static str, value: usize, limit: usize },

    #[error("sublinear mode requires a prebuilt index for state {state}")]
    MissingIndex { state: usize },

    #[error("malformed MDP file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
