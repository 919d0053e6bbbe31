//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("csv error in {path} at row {row}, column {column}: {message}")]
    Csv {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    /// The two weight rows defining a requested boundary coincide, so no
    /// hyperplane separates the pair.
    #[error("degenerate boundary between classes {p} and {q} (|w_p - w_q| <= {norm:.3e})")]
    DegenerateBoundary { p: usize, q: usize, norm: f64 },

    #[error("input is not linearly separable (best achievable margin {margin:.6e})")]
    NonSeparable { margin: f64 },

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: String, step: u64 },

    /// A finite-difference evaluation point where some argmax decision sits
    /// inside the perturbation window; the check would be meaningless.
    #[error("unstable evaluation point: {0}")]
    UnstableEvalPoint(String),
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::DimMismatch(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
