use thiserror::Error;

/// Errors raised by every module of the crate.
///
/// The variants are grouped by what went wrong rather than where, so callers
/// (the CLI in particular) can map them onto stable exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmcError {
    /// Malformed input: bad probabilities, dimension mismatch, out-of-range index.
    #[error("{module}: validation error: {message}")]
    Validation { module: &'static str, message: String },

    /// A structural hypothesis does not hold (reducible chain, periodic chain,
    /// non-homogeneous schedule, zero mass on the censor set, ...).
    #[error("{module}: hypothesis violated: {message}")]
    Hypothesis { module: &'static str, message: String },

    /// Exact enumeration would exceed the configured table cap.
    #[error("{module}: enumeration needs {required} entries, cap is {cap}{hint}")]
    Size {
        module: &'static str,
        required: u128,
        cap: u64,
        hint: &'static str,
    },

    /// A time index past what a schedule or table covers.
    #[error("{module}: index {index} out of range (available: {available})")]
    Range {
        module: &'static str,
        index: usize,
        available: usize,
    },

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl EmcError {
    pub(crate) fn validation(module: &'static str, message: impl Into<String>) -> Self {
        EmcError::Validation {
            module,
            message: message.into(),
        }
    }

    pub(crate) fn hypothesis(module: &'static str, message: impl Into<String>) -> Self {
        EmcError::Hypothesis {
            module,
            message: message.into(),
        }
    }

    /// Module that raised the error.
    pub fn module(&self) -> &'static str {
        match self {
            EmcError::Validation { module, .. }
            | EmcError::Hypothesis { module, .. }
            | EmcError::Size { module, .. }
            | EmcError::Range { module, .. } => module,
            EmcError::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, EmcError>;
