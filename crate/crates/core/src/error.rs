use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("frame scale must be positive, got phi={phi}, beta={beta}")]
    NonPositiveScale { phi: f64, beta: f64 },

    #[error("frame scale out of bounds [{min}, {max}]: phi={phi}, beta={beta}")]
    ScaleOutOfBounds { phi: f64, beta: f64, min: f64, max: f64 },

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("missing transform for part `{0}`")]
    MissingTransform(String),

    #[error("degenerate part `{part}`: {reason}")]
    DegeneratePart { part: String, reason: String },

    #[error("mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate bounding box in frame `{0}`")]
    DegenerateBox(String),

    #[error("degenerate torso: length {0} below threshold")]
    DegenerateTorso(f64),

    #[error("not enough frames: need at least {needed}, got {got}")]
    TooFewFrames { needed: usize, got: usize },

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("pfm: {0}")]
    Pfm(String),

    /// A failure while processing one frame of a sequence.
    #[error("frame {index}: {source}")]
    InFrame { index: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// The underlying error with any frame context removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::InFrame { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn in_frame(self, index: usize) -> Self {
        Error::InFrame { index, source: Box::new(self) }
    }

    pub(crate) fn schema_from_json(err: serde_json::Error) -> Self {
        // serde_json already reports "at line L column C".
        Error::Schema(err.to_string())
    }
}
