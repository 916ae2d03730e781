use std::path::PathBuf;

/// Errors surfaced by the segmentation toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("scene `{scene_id}` is {height}x{width} but the tile size is {tile_size}")]
    SceneTooSmall {
        scene_id: String,
        height: usize,
        width: usize,
        tile_size: usize,
    },

    #[error("invalid {what}: {why}")]
    InvalidConfig { what: String, why: String },

    #[error("shape mismatch: {context} ({lhs:?} vs {rhs:?})")]
    ShapeMismatch {
        context: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("empty {what}")]
    Empty { what: String },

    #[error("input spatial dims {dims:?} not divisible by the encoder stride {stride}; pad to a multiple of {stride}")]
    Indivisible { dims: (usize, usize), stride: usize },

    #[error("augmentation magnitude {magnitude} outside the allowed range [{lo}, {hi}]")]
    MagnitudeOutOfRange { magnitude: f64, lo: f64, hi: f64 },

    #[error("unknown TTA preset `{name}`; valid presets: {valid}")]
    UnknownPreset { name: String, valid: String },

    #[error("rescale by {scale} on {size}px input collapses below the encoder minimum of {min}px")]
    RescaleTooSmall { scale: f64, size: usize, min: usize },

    #[error("checkpoint at {path}: {why}")]
    Checkpoint { path: PathBuf, why: String },

    #[error("non-finite loss at epoch {epoch}, step {step}; batch origins: {origins}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        origins: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode/encode error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub fn invalid(what: impl Into<String>, why: impl Into<String>) -> Self {
        Error::InvalidConfig {
            what: what.into(),
            why: why.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
