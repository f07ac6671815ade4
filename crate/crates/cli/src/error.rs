use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config constraint violated: {0}")]
    Constraint(String),
    #[error("simulation failed: {0}")]
    Simulation(#[from] csm_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit status. Usage errors from argument parsing exit with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 3,
            CliError::Constraint(_) => 4,
            CliError::Simulation(_) => 5,
            CliError::Io { .. } | CliError::Csv(_) | CliError::Json(_) => 6,
        }
    }
}
