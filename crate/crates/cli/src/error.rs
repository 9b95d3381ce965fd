use thiserror::Error;

/// Failures of the experiment runner, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid or unreadable configuration, including bad data references.
    #[error("configuration error: {0}")]
    Config(String),

    /// Every seed of a run ended in a numerical failure.
    #[error("all {0} seeds failed")]
    AllSeedsFailed(usize),

    #[error(transparent)]
    Core(#[from] hetmogp_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("state file: {0}")]
    State(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::AllSeedsFailed(_) => 3,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
