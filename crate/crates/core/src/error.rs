//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated (bad shapes, non-finite
    /// values, malformed kernel specs, out-of-range configuration).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The covariance matrix could not be factorized even after escalating
    /// jitter. Carries every jitter magnitude that was attempted.
    #[error("numerical failure: covariance factorization failed (attempted jitters: {attempted_jitters:?})")]
    NumericalFailure { attempted_jitters: Vec<f64> },

    /// A training run produced a non-finite likelihood or gradient.
    #[error("diverged run at iteration {iteration}: {detail}")]
    DivergedRun { iteration: usize, detail: String },

    /// NMSE is undefined when the reference targets have zero variance.
    #[error("degenerate targets: zero variance, NMSE undefined")]
    DegenerateTargets,

    /// Malformed input data file.
    #[error("parse error at {path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
