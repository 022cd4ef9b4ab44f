use poss_core::PossError;

use crate::config::ConfigError;

/// Failure of a subcommand, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// Arguments or inputs the pipeline refuses to run with.
    #[error("{0}")]
    Rejected(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O failure: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Rejected(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<PossError> for CliError {
    fn from(e: PossError) -> Self {
        match e {
            e if e.is_numerical() => CliError::Numerical(e.to_string()),
            PossError::NonUniformSampling { .. } => CliError::Io(e.to_string()),
            e => CliError::Rejected(e.to_string()),
        }
    }
}
