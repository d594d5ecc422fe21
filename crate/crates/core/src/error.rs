use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two atoms coincide (or nearly so); the van-der-Waals interaction
    /// is not defined at zero distance.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    /// Hilbert-space dimension beyond what an operation supports.
    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    /// A loss or gradient evaluation produced non-finite values.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("malformed data: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
