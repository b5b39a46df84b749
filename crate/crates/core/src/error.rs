use std::io;

/// Crate-wide error type. Every variant maps to a stable, machine-parsable
/// class string (see [`Error::class`]) used by the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
    #[error("segment too short: {frames} frames < {needed}")]
    SegmentTooShort { frames: usize, needed: usize },
    #[error("non-finite loss `{name}` at step {step}")]
    NonFinite { name: String, step: u64 },
    #[error("missing stage-2 checkpoint: {0}")]
    MissingStage2Checkpoint(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::ConfigMismatch(_) => "config-mismatch",
            Error::InvalidCorpus(_) => "invalid-corpus",
            Error::SegmentTooShort { .. } => "segment-too-short",
            Error::NonFinite { .. } => "non-finite-loss",
            Error::MissingStage2Checkpoint(_) => "missing-stage2-checkpoint",
            Error::MissingCheckpoint(_) => "missing-checkpoint",
            Error::Format(_) | Error::Json(_) | Error::Wav(_) => "malformed-file",
            Error::Image(_) | Error::Io(_) => "io-error",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
