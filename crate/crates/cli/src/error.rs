use thiserror::Error;

/// Command failure, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{0}")]
    Divergence(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl From<hamsde::Error> for CliError {
    fn from(e: hamsde::Error) -> Self {
        match e {
            hamsde::Error::Divergence(rep) => CliError::Divergence(rep.to_string()),
            hamsde::Error::Io(e) => CliError::Io(e.to_string()),
            hamsde::Error::Csv(e) if e.is_io_error() => CliError::Io(e.to_string()),
            hamsde::Error::InvalidConfig(msg) => CliError::Validation(msg),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
