//! On-disk formats: dataset manifests with PNG images, the compact stream
//! container, and the per-frame viewer bundle. All binary data is
//! little-endian; every float is stored as f32.

pub mod bundle;
pub mod dataset;
pub mod gaussians;
pub mod png;
pub mod stream;

pub use bundle::{export_viewer_bundle, read_bundle_frame, read_bundle_metadata, BundleFrame, BundleMetadata};
pub use dataset::{CameraSpec, Dataset, DatasetManifest, FrameReader, FrameViews};
pub use stream::{FrameRecord, SceneInfo, SizeRow, StreamReader, StreamWriter};
