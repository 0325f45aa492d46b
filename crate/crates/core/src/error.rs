use std::io;
use std::path::PathBuf;

/// Errors produced anywhere in the DenseImage network pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller passed arguments that violate an operation's preconditions.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A file on disk does not follow the expected binary or text layout.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A manifest or config parsed but failed semantic checks.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Fails with `InvalidArgument` unless `cond` holds.
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        // NaN comparisons are false, so they fail the check
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err($crate::error::Error::InvalidArgument(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
