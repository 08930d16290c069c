use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported WAV format in {path}: {property}")]
    UnsupportedFormat { path: PathBuf, property: String },

    #[error("WAV decoding error in {path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },

    #[error("length mismatch: {left} vs {right} samples")]
    LengthMismatch { left: usize, right: usize },

    #[error("zero-energy {0}")]
    ZeroEnergy(&'static str),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("target index {index} out of range for {classes} classes")]
    TargetOutOfRange { index: usize, classes: usize },

    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("infeasible alignment: {frames} frames for a chain of {states} states")]
    InfeasibleAlignment { frames: usize, states: usize },

    #[error("unknown phone symbol {0:?}")]
    UnknownPhone(String),

    #[error("{failed} of {total} utterances failed augmentation (first: {first})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("missing artifact {path} (produced by `{producer}`)")]
    MissingArtifact { path: PathBuf, producer: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::UnsupportedFormat { .. } => "unsupported_format",
            Error::Wav { .. } => "wav",
            Error::SampleRateMismatch { .. } => "sample_rate_mismatch",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::ZeroEnergy(_) => "zero_energy",
            Error::Empty(_) => "empty",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::TargetOutOfRange { .. } => "target_out_of_range",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::InfeasibleAlignment { .. } => "infeasible_alignment",
            Error::UnknownPhone(_) => "unknown_phone",
            Error::TooManyFailures { .. } => "too_many_failures",
            Error::MissingArtifact { .. } => "missing_artifact",
            Error::Config(_) => "config",
            Error::Serde(_) => "serialization",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
