use thiserror::Error;

/// A failed command and the process exit status it maps to.
#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CLUSTERING: i32 = 3;
pub const EXIT_SEQUENCE: i32 = 4;
pub const EXIT_NAME_MISMATCH: i32 = 5;

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(EXIT_INPUT, message)
    }

    /// Wraps a library error with the given context, choosing the exit code
    /// from the error kind.
    pub fn wrap(context: impl std::fmt::Display, err: ctxtrack::Error) -> Self {
        let code = match err {
            ctxtrack::Error::InsufficientDistinct { .. } => EXIT_CLUSTERING,
            ctxtrack::Error::Config(_) => EXIT_INPUT,
            _ => EXIT_FAILURE,
        };
        Self::new(code, format!("{context}: {err}"))
    }

    pub fn sequence(context: impl std::fmt::Display, err: ctxtrack::Error) -> Self {
        Self::new(EXIT_SEQUENCE, format!("{context}: {err}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches context to library results.
pub trait Context<T> {
    fn ctx(self, context: impl std::fmt::Display) -> CliResult<T>;
}

impl<T> Context<T> for ctxtrack::Result<T> {
    fn ctx(self, context: impl std::fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::wrap(context, e))
    }
}
