use std::fmt;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<egomotion::Error> for CliError {
    fn from(e: egomotion::Error) -> Self {
        match e {
            egomotion::Error::Numerical(_) => Self::numerical(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Treat a library error as a configuration mistake.
pub fn as_usage(e: egomotion::Error) -> CliError {
    CliError::usage(e.to_string())
}
