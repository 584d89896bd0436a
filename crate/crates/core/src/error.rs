use std::path::PathBuf;

/// Errors raised by the selection, loss and training routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("index {index} out of range for ground set of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("element {0} is already in the selected set")]
    AlreadySelected(usize),

    #[error("query set must be non-empty")]
    EmptyQuery,

    #[error("matrix over set {set:?} is not positive definite")]
    NotPositiveDefinite { set: Vec<usize> },

    #[error("degenerate value {value:e} at or below floor {floor:e}: {context}")]
    Degenerate { value: f64, floor: f64, context: String },

    #[error("instance too large: {subsets} subsets exceed the limit of {limit}")]
    TooLarge { subsets: u128, limit: u128 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
