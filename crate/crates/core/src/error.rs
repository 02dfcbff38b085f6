use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quaternion has zero norm")]
    ZeroQuaternion,

    #[error("ill-conditioned gaussian: covariance is not invertible (det = {det:e})")]
    DegenerateCovariance { det: f64 },

    #[error("rotation matrix is not orthonormal (deviation {deviation:e})")]
    NotARotation { deviation: f64 },

    #[error("point ({x}, {y}, {z}) lies outside the encoding bounding box")]
    OutsideBounds { x: f64, y: f64, z: f64 },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value detected in {tensor}")]
    NonFinite { tensor: String },

    #[error("dataset has no frame {index}")]
    MissingFrame { index: usize },

    #[error("missing file {}", .path.display())]
    MissingFile { path: PathBuf },

    #[error("malformed pose for camera {camera}: {reason}")]
    MalformedPose { camera: String, reason: String },

    #[error("resolution mismatch for camera {camera}: expected {expected:?}, found {found:?}")]
    ResolutionMismatch {
        camera: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("unsupported stream version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("checksum mismatch in {block}")]
    Checksum { block: String },

    #[error("truncated {block}")]
    Truncated { block: String },

    #[error("malformed {block}: {reason}")]
    Malformed { block: String, reason: String },

    #[error("frame index {index} out of range (stream has {count} frames)")]
    FrameOutOfRange { index: usize, count: usize },

    #[error("image error: {0}")]
    Image(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by numerical breakdown during training: a
    /// diverging optimizer surfaces as non-finite values or degenerate geometry.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::ZeroQuaternion
                | Error::DegenerateCovariance { .. }
                | Error::NotARotation { .. }
        )
    }
}
