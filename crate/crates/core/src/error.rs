use std::fmt;

/// Errors produced by the library.
#[derive(Debug)]
pub enum Error {
    /// Two arrays that must be paired have different lengths or shapes.
    ShapeMismatch(String),
    /// Input violates a documented precondition.
    InvalidInput(String),
    /// Parameter or configuration out of its valid range.
    InvalidConfig(String),
    /// Metadata document could not be parsed.
    Parse(String),
    /// Underlying file-system failure.
    Io(std::io::Error),
    /// Image encoding or decoding failure.
    Codec(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
            Self::InvalidInput(m) => write!(f, "invalid input: {m}"),
            Self::InvalidConfig(m) => write!(f, "invalid configuration: {m}"),
            Self::Parse(m) => write!(f, "parse error: {m}"),
            Self::Io(e) => write!(f, "I/O error: {e}"),
            Self::Codec(m) => write!(f, "codec error: {m}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<png::DecodingError> for Error {
    fn from(e: png::DecodingError) -> Self {
        match e {
            png::DecodingError::IoError(io) => Self::Io(io),
            other => Self::Codec(other.to_string()),
        }
    }
}

impl From<png::EncodingError> for Error {
    fn from(e: png::EncodingError) -> Self {
        match e {
            png::EncodingError::IoError(io) => Self::Io(io),
            other => Self::Codec(other.to_string()),
        }
    }
}

impl From<tiff::TiffError> for Error {
    fn from(e: tiff::TiffError) -> Self {
        match e {
            tiff::TiffError::IoError(io) => Self::Io(io),
            other => Self::Codec(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Self::Parse(e.to_string())
    }
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}
