use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid rotation: orthonormality error {0:e}")]
    InvalidRotation(f64),
    #[error("degenerate 6d rotation: {0}")]
    Degenerate6d(String),
    #[error("feature encode error: {0}")]
    Encode(String),
    #[error("feature decode error at frame {frame}, block {block}: {reason}")]
    Decode {
        frame: usize,
        block: usize,
        reason: String,
    },
    #[error("pose fit failed: {0}")]
    FitFailure(String),
    #[error("tokenizer config error: {0}")]
    Config(String),
    #[error("codebook has no entries")]
    UninitializedCodebook,
    #[error("invalid token {id} at position {position}")]
    InvalidToken { position: usize, id: u32 },
    #[error("malformed motion block: {0}")]
    MalformedBlock(String),
    #[error("windowing error: {0}")]
    Windowing(String),
    #[error("training diverged: {0}")]
    TrainingDiverged(String),
    #[error("point behind camera (z = {0})")]
    BehindCamera(f64),
    #[error("augmentation parameter out of range: {0}")]
    AugmentRange(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate frame {0}: all joints coincide")]
    DegenerateFrame(usize),
    #[error("decode mode error: {0}")]
    Mode(String),
    #[error("ingest error at `{field}`: {reason}")]
    Ingest { field: String, reason: String },
    #[error("balance error: {0}")]
    Balance(String),
    #[error("model file format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// True for failures caused by numerical divergence rather than bad data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::TrainingDiverged(_) | Error::FitFailure(_))
    }
}
