use std::path::PathBuf;

/// Errors raised across the crate.
///
/// Variants split into input problems (bad parameters, malformed files,
/// inconsistent instances) and runtime failures; see [`Error::is_validation`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("malformed instance: {0}")]
    MalformedInstance(String),

    #[error("variable {0} is already assigned")]
    AlreadyAssigned(usize),

    #[error("instance has {users} users, exhaustive enumeration is capped at {cap}")]
    TooLarge { users: usize, cap: usize },

    #[error("integration failed at x = {x}: {reason}")]
    Integration { x: f64, reason: String },

    #[error("resource guard: {0}")]
    ResourceLimit(String),

    #[error("cannot read {}: {source}", path.display())]
    Input {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True when the error is caused by the caller's input rather than by a
    /// failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Integration { .. } | Error::ResourceLimit(_) | Error::Output { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
