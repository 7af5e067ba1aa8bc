use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
///
/// `code()` gives a stable machine-readable name used by the CLI's JSON
/// error contract.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no manifest.json in {0}")]
    MissingManifest(PathBuf),

    #[error("frame count mismatch: expected {expected}, found {found}")]
    FrameCountMismatch { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("encode error: {0}")]
    Encode(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-positive depth {value} at frame {frame}, pixel ({x}, {y})")]
    NonPositiveDepth {
        frame: usize,
        x: u32,
        y: u32,
        value: f32,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),

    #[error("no disparity scale overlaps the reference view (best s={best_scale} at {best_psnr:.2} dB, threshold {threshold} dB)")]
    NoOverlap {
        best_scale: f64,
        best_psnr: f64,
        threshold: f64,
    },

    #[error("frame {0} is fully masked")]
    FullyMaskedFrame(usize),

    #[error("backend failed: {0}")]
    BackendFailed(String),

    #[error("backend output mismatch: {0}")]
    OutputMismatch(String),

    #[error("backend timed out after {0} s")]
    Timeout(u64),

    #[error("mask excludes every pixel")]
    EmptyMask,

    #[error("image too small: {width}x{height}, need at least {min}x{min}")]
    TooSmall { width: u32, height: u32, min: u32 },

    #[error("temporal metric needs at least two frames")]
    SingleFrame,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingManifest(_) => "MissingManifest",
            Error::FrameCountMismatch { .. } => "FrameCountMismatch",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::Decode(_) => "DecodeError",
            Error::Encode(_) => "EncodeError",
            Error::Io { .. } => "IoError",
            Error::NonPositiveDepth { .. } => "NonPositiveDepth",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::InvalidRange(_) => "InvalidRange",
            Error::InvalidRecipe(_) => "InvalidRecipe",
            Error::NoOverlap { .. } => "NoOverlap",
            Error::FullyMaskedFrame(_) => "FullyMaskedFrame",
            Error::BackendFailed(_) => "BackendFailed",
            Error::OutputMismatch(_) => "OutputMismatch",
            Error::Timeout(_) => "Timeout",
            Error::EmptyMask => "EmptyMask",
            Error::TooSmall { .. } => "TooSmall",
            Error::SingleFrame => "SingleFrame",
            Error::Json(_) => "JsonError",
        }
    }
}
