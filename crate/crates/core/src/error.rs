use thiserror::Error;

/// Errors raised by the estimators and their data plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("ill-conditioned matrix in {context}: minimum eigenvalue {min_eigenvalue:e}")]
    Conditioning { context: String, min_eigenvalue: f64 },

    #[error("group {group}: covariance block is numerically singular")]
    SingularGroup { group: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("instrument column {column} is degenerate (variance {variance:e})")]
    DegenerateInstrument { column: usize, variance: f64 },

    #[error("design restricted to the active set is rank deficient: {0}")]
    RankDeficient(String),

    #[error("empty active set")]
    EmptyActiveSet,

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("penalty specification: {0}")]
    Penalty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
