//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the hull registry, file formats and the label pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// A hull, keypoint or logits file violates its schema.
    #[error("schema: {0}")]
    Schema(String),

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Class id that does not belong to the category being processed.
    #[error("class {class} does not belong to category `{category}`")]
    ForeignClass { class: u16, category: String },

    #[error("keypoint index {index} out of range for category with {len} keypoints")]
    KeypointOutOfRange { index: usize, len: usize },

    #[error("no visible keypoints")]
    NoVisibleKeypoints,

    #[error("sample too short: need at least {need} values, got {got}")]
    SampleTooShort { need: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
