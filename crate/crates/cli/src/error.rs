use pfgmm_core::Error as CoreError;
use thiserror::Error;

/// Failures of a run, each mapped to a process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    /// Every replication (or the single fit) failed numerically.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    /// Classifies a core error raised while loading input data.
    pub fn from_data(err: CoreError) -> Self {
        match err {
            CoreError::Io(e) => CliError::Io(e),
            other => CliError::Data(other.to_string()),
        }
    }

    /// Classifies a core error raised while fitting.
    pub fn from_fit(err: CoreError) -> Self {
        match err {
            CoreError::InvalidParameter(_) | CoreError::Penalty(_) => CliError::Config(err.to_string()),
            CoreError::Io(e) => CliError::Io(e),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
