use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the deraining pipeline and its stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing frame file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("empty sequence")]
    EmptySequence,

    #[error("dimension mismatch: expected {expected_w}x{expected_h}, found {found_w}x{found_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no valid search offsets for frame slot {0}")]
    NoValidOffsets(i32),

    #[error("frame slot {0} is not part of the window")]
    MissingWindowFrame(i32),

    #[error("rain mask covers entire SP")]
    RainMaskCoversSp,

    #[error("requested {requested} sorted matches but only {available} candidates exist")]
    NotEnoughCandidates { requested: usize, available: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("pixel ({row}, {col}) is not covered by any superpixel patch")]
    UncoveredPixel { row: usize, col: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("no rain in ground-truth mask")]
    EmptyRainMask,

    #[error("channel layout mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: String, found: String },

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("image error at {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
