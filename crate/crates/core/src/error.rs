use thiserror::Error;

/// Errors produced by grid construction, training, coding and the file formats.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("invalid dimensions {0:?}: need 1 to 3 positive extents")]
    InvalidDims(Vec<usize>),

    #[error("length mismatch: expected {expected} cells, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("class {class} out of range (vocabulary size {size})")]
    ClassOutOfRange { class: u32, size: u32 },

    #[error("unknown instance id {0}")]
    UnknownInstance(u32),

    #[error("axis count mismatch: expected {expected}, got {actual}")]
    AxisMismatch { expected: usize, actual: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("instance of class {class} anchored at {anchor:?} does not match its vocabulary shape")]
    ShapeMismatch { class: u32, anchor: Vec<usize> },

    #[error("token {index} (class {class}) exceeds the grid bounds")]
    OutOfBounds { index: usize, class: u32 },

    #[error("token {index} (class {class}) overlaps already covered cells")]
    Overlap { index: usize, class: u32 },

    #[error("tokens exhausted with {uncovered} cells left uncovered")]
    TokensExhausted { uncovered: usize },

    #[error("{remaining} tokens remain after the grid is fully covered")]
    TrailingTokens { remaining: usize },

    #[error("grid is fully covered")]
    FullyCovered,

    #[error("k = {k} out of range for {size} vectors")]
    InvalidK { k: usize, size: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed {format} data: {reason}")]
    Malformed { format: &'static str, reason: String },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
