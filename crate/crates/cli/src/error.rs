use std::fmt;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;
pub const EXIT_EMPTY: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_IO,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    pub fn empty(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_EMPTY,
            message: message.into(),
        }
    }

    /// Prefixes the message with the file or step it came from.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub fn exit_code(err: &cn2_core::Error) -> u8 {
    use cn2_core::Error::*;
    match err {
        Io(_) => EXIT_IO,
        Csv(e) if e.is_io_error() => EXIT_IO,
        Json(e) if e.is_io() => EXIT_IO,
        Numerical(_) | FitNotConverged { .. } => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}

impl From<cn2_core::Error> for CliError {
    fn from(err: cn2_core::Error) -> Self {
        CliError {
            code: exit_code(&err),
            message: err.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::io(err.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> Self {
        if err.is_io() {
            CliError::io(err.to_string())
        } else {
            CliError::validation(err.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
