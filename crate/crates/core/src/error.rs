use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("step size {step} exceeds the stability bound 1/L = {bound} for {sampler}")]
    StepTooLarge {
        sampler: &'static str,
        step: f64,
        bound: f64,
    },

    #[error("chain diverged at step {step}")]
    Diverged { step: usize },

    #[error("region is not supported: {0}")]
    UnsupportedRegion(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("remote error: {0}")]
    Remote(String),

    #[error("audit failed: {0}")]
    Audit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
