use std::fmt;
use std::path::Path;

use seaer_core::Error as CoreError;

/// Failure class of a command; each maps to one process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad usage, malformed or inconsistent configuration or input files.
    Config,
    /// Filesystem failure.
    Io,
    /// Failure while computing.
    Runtime,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { kind: Kind::Config, message: message.into() }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError { kind: Kind::Io, message: format!("{}: {err}", path.display()) }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError { kind: Kind::Runtime, message: message.into() }
    }

    /// Classify a core error raised while loading inputs: file-system errors
    /// are IO, everything else is a configuration problem.
    pub fn loading(context: &str, err: CoreError) -> Self {
        let kind = if matches!(err, CoreError::Io(_)) { Kind::Io } else { Kind::Config };
        CliError { kind, message: format!("{context}: {err}") }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Config => 2,
            Kind::Io => 3,
            Kind::Runtime => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}
