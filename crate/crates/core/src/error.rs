use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a model invariant. `field` names the offending entry.
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    /// Model file could not be parsed.
    #[error("{}", match .line { Some(l) => format!("parse error at line {l}: {message}"), None => format!("parse error: {message}") })]
    Parse { line: Option<usize>, message: String },

    #[error("capacity exceeded: {what} needs {size}, cap is {cap}")]
    Capacity { what: String, size: usize, cap: usize },

    #[error("coefficient A is singular at step {step} on path {path:?}")]
    SingularCoefficient { step: usize, path: Vec<usize> },

    #[error("unsupported scheme: {0}")]
    UnsupportedScheme(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
