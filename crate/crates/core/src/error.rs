use thiserror::Error;

/// Errors raised by the preference-optimization library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("empty class: {0}")]
    EmptyClass(String),

    /// A quantity left the domain where it is defined (for example an
    /// aggregated probability mass outside (0, 1)).
    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    /// A non-finite intermediate value.
    #[error("non-finite value in {location}: {detail}")]
    NonFinite { location: String, detail: String },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn non_finite(location: impl Into<String>, detail: impl Into<String>) -> Error {
    Error::NonFinite {
        location: location.into(),
        detail: detail.into(),
    }
}
