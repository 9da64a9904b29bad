use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("component {component} collapsed (effective size {weight:.3e})")]
    DegenerateComponent { component: usize, weight: f64 },

    #[error("design matrix for component {0} is rank deficient")]
    RankDeficient(usize),

    #[error("all {starts} starts failed; last error: {last}")]
    AllStartsFailed { starts: usize, last: String },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
