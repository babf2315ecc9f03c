use alloc::string::String;

/// Errors raised by the optimization core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument is malformed: wrong dimension, non-finite entry, out of range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A documented precondition does not hold (e.g. an invalid step schedule).
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    /// An iterate became non-finite or left the divergence guard at iteration `k`.
    #[error("iterates diverged at iteration {k}")]
    Diverged { k: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::PreconditionViolation(msg.into())
}
