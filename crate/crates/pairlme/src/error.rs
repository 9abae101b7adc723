use pairlme_core::Error as CoreError;

/// Failures surfaced by the command-line driver, split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn user(msg: impl Into<String>) -> Self {
        CliError::User(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::SingularBlock { .. }
            | CoreError::SingularKernel(_)
            | CoreError::RankDeficient { .. }
            | CoreError::DegenerateFit
            | CoreError::Optimizer(_)
            | CoreError::BootstrapFailures { .. } => CliError::Numerical(msg),
            _ => CliError::User(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::User(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
