use thiserror::Error;

/// Errors raised by the numeric kernels, solvers and image I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dictionary has no nonzero atom")]
    ZeroDictionary,

    #[error("branching requested on a node without fractional indicators")]
    IntegralNode,

    #[error("column {column}: {source}")]
    Column {
        column: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed image: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
