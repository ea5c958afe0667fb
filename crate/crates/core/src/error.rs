use thiserror::Error;

/// Errors produced by the feature pipeline, models, and estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("utterance too short: {len} samples, need at least {frame_len}")]
    TooShort { len: usize, frame_len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient data: {frames} frames for {mixtures} mixtures")]
    InsufficientData { frames: usize, mixtures: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("features must be mean-normalized before variance normalization")]
    NotMeanNormalized,

    #[error("degenerate frame: accumulator matrix is numerically singular")]
    DegenerateFrame,

    #[error("matrix factorization failed: {0}")]
    Factorization(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),

    #[error("malformed {kind} data: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            reason: reason.into(),
        }
    }
}
