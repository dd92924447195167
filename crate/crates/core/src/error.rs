use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("gene {index} = {value} lies outside the encoding domain")]
    OutOfDomain { index: usize, value: f64 },

    #[error("genome encoding does not match the problem encoding")]
    EncodingMismatch,

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("invalid active mask: {0}")]
    InvalidMask(String),

    #[error("empty population")]
    EmptyPopulation,

    #[error("empty sample")]
    EmptySample,

    #[error("preference store is empty or has no usable pairs")]
    EmptyPreferences,

    #[error("objective {0} is not available in the partial objective vector")]
    MissingFeature(usize),

    #[error("invalid ranking: {0}")]
    InvalidRanking(String),

    #[error("decision maker channel closed: {0}")]
    ChannelClosed(String),

    #[error("inconsistent traces: {0}")]
    InconsistentTraces(String),

    #[error("unknown axis `{0}`")]
    UnknownAxis(String),

    #[error("empty experiment grid")]
    EmptyGrid,

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
