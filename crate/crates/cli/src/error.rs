use pcdiag_core::Error;
use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{context}{source}")]
    Core {
        context: String,
        #[source]
        source: Error,
    },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// Prefixes a core error with where it happened (`variant base: ...`).
    pub fn within(context: impl Into<String>, source: Error) -> Self {
        CliError::Core {
            context: context.into() + ": ",
            source,
        }
    }

    /// 0 ok, 1 internal numeric failure, 2 config or contract, 3 I/O or bad
    /// input file, 4 training divergence, 5 attack reliability.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core { source, .. } => match source.root() {
                Error::Io { .. } | Error::Format(_) | Error::Corruption(_) | Error::Parse { .. } | Error::Value { .. } => 3,
                Error::Divergence { .. } => 4,
                Error::Reliability { .. } => 5,
                Error::Calibration(_) | Error::NumericGuard(_) | Error::Dimension(_) | Error::Index(_) => 1,
                _ => 2,
            },
        }
    }
}

impl From<Error> for CliError {
    fn from(source: Error) -> Self {
        CliError::Core {
            context: String::new(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
