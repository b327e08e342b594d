use std::fmt;

/// Errors produced anywhere in the library.
///
/// The variants map onto the CLI exit-code categories: configuration and
/// contract problems, data problems, and numeric failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("numeric domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric abort: {0}")]
    NumericAbort(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse grouping used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Shape { .. } | Error::Contract(_) | Error::Input(_) => {
                ErrorCategory::Config
            }
            Error::Data(_) | Error::Degenerate(_) | Error::Io(_) => ErrorCategory::Data,
            Error::Domain { .. } | Error::NumericAbort(_) => ErrorCategory::Numeric,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl fmt::Display) -> Self {
        Error::Shape {
            op,
            detail: detail.to_string(),
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl fmt::Display) -> Self {
        Error::Domain {
            op,
            detail: detail.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
