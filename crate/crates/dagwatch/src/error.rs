//! Crate error type.

use crate::graph::WeightedGraph;

/// Everything that can go wrong across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violated a documented precondition
    /// (dimension mismatch, non-finite input, out-of-range parameter, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration file or config field failed validation.
    #[error("configuration error: {0}")]
    Config(String),

    /// The solver exhausted its outer iterations without driving the
    /// acyclicity penalty below its target.  Carries the best iterate seen
    /// and the penalty value it reached so callers can keep going.
    #[error("acyclicity constraint not met after {outer_iters} outer iterations (h = {h:.3e})")]
    ConstraintInfeasible {
        /// Best (lowest-h) iterate found before giving up.
        best: Box<WeightedGraph>,
        /// Acyclicity penalty at `best`.
        h: f64,
        /// Outer iterations consumed.
        outer_iters: usize,
    },

    /// Filesystem failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure.
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Shorthand for [`Error::InvalidArgument`].
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Shorthand for [`Error::Config`].
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Shorthand for [`Error::Io`].
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
