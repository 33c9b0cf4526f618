use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Stage(beatgan::Error),
}

impl From<beatgan::Error> for CliError {
    fn from(e: beatgan::Error) -> Self {
        match e {
            beatgan::Error::Config(m) => CliError::Config(m),
            other => CliError::Stage(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Stage(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
        })
    }
}
