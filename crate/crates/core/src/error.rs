use std::path::PathBuf;

/// Errors raised by every stage of the toolkit.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: unsupported image: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },

    #[error("corrupt container: {0}")]
    CorruptContainer(String),

    #[error("unsupported container version {found} (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("input too small: {0}")]
    TooSmall(String),

    #[error("region out of bounds: {0}")]
    OutOfBounds(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(String),

    /// A signal without variance, for which a normalized score is undefined.
    #[error("degenerate signal: {0}")]
    Degenerate(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Degenerate(_) | Error::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
