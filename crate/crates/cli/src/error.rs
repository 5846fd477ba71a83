use std::fmt;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable, malformed or invalid configuration.
    Config(String),
    Io(String),
    /// Non-finite training loss or an undefined metric.
    Numeric(String),
    /// Inputs that parse but violate a precondition.
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Validation(_) => 5,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "{m}"),
            CliError::Numeric(m) => write!(f, "{m}"),
            CliError::Validation(m) => write!(f, "validation error: {m}"),
        }
    }
}

impl From<dbiqa::Error> for CliError {
    fn from(e: dbiqa::Error) -> Self {
        use dbiqa::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { .. } | E::Decode { .. } => CliError::Io(msg),
            E::Numeric(_) | E::Diverged { .. } => CliError::Numeric(msg),
            E::Domain(_) | E::Shape(_) | E::Json(_) | E::Checkpoint(_) => CliError::Validation(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
