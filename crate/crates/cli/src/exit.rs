//! Process exit codes and the error type that carries them.

use std::fmt;
use std::process::ExitCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    /// Bad flags, missing or unreadable configuration.
    Usage = 1,
    /// Input files that fail to parse or validate.
    Data = 2,
    /// The embedding provider could not be reached.
    Provider = 3,
    /// More than the tolerated fraction of cells failed.
    FailureThreshold = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub code: Code,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(code: Code, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Self::new(Code::Usage, anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code as u8)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub trait ResultExt<T> {
    fn with_code(self, code: Code, context: impl fmt::Display) -> Result<T, CliError>;

    fn usage(self, context: impl fmt::Display) -> Result<T, CliError>
    where
        Self: Sized,
    {
        self.with_code(Code::Usage, context)
    }

    fn data(self, context: impl fmt::Display) -> Result<T, CliError>
    where
        Self: Sized,
    {
        self.with_code(Code::Data, context)
    }
}

impl<T, E> ResultExt<T> for Result<T, E>
where
    E: std::error::Error + Send + Sync + 'static,
{
    fn with_code(self, code: Code, context: impl fmt::Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(code, anyhow::Error::new(e).context(context.to_string())))
    }
}
