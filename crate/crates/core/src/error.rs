//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("gesture id {gesture_id} out of range for {n_gestures} gestures")]
    LabelRange { gesture_id: usize, n_gestures: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("unknown noise kind: {0}")]
    UnknownNoiseKind(String),
    #[error("background pool is empty")]
    EmptyBackgroundPool,
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("sample {0} has no mask")]
    MissingMask(String),
    #[error("weights fingerprint {found:#018x} does not match config fingerprint {expected:#018x}")]
    FingerprintMismatch { expected: u64, found: u64 },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("weights file error: {0}")]
    WeightsFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
