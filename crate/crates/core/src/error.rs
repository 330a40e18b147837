use thiserror::Error;

/// Errors raised by the benchmark kernel.
///
/// Each variant carries a stable numeric code so that bindings and the CLI
/// can surface the same failure class.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("construction error: {0}")]
    Construction(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {message}")]
    Format { context: String, message: String },
}

impl Error {
    pub fn code(&self) -> u32 {
        match self {
            Error::Parameter(_) => 1,
            Error::Domain(_) => 2,
            Error::Protocol(_) => 3,
            Error::Lookup(_) => 4,
            Error::Validation(_) => 5,
            Error::Construction(_) => 6,
            Error::Training(_) => 7,
            Error::Io { .. } => 8,
            Error::Format { .. } => 9,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_) | Error::Lookup(_) | Error::Validation(_) | Error::Construction(_)
        )
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn format(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Format {
            context: context.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
