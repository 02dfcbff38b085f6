//! Streamable reconstruction of dynamic scenes with 3D Gaussians.
//!
//! A scene is trained once on its first frame; every later frame is
//! described by a small neural transformation cache (a hash-grid encoded
//! MLP that moves and rotates the previous frame's Gaussians) plus a handful
//! of frame-specific Gaussians for content that was not there before.

pub mod addition;
pub mod camera;
pub mod codec;
pub mod config;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod ntc;
pub mod optim;
pub mod pipeline;
pub mod quat;
pub mod raster;
pub mod synth;
pub mod train;
pub mod transform;
pub mod view;

pub use camera::Camera;
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use gaussian::{Gaussian, GaussianCloud};
pub use image::Image;
pub use ntc::{HashGridConfig, NeuralTransformationCache, NtcConfig};
pub use raster::{rasterize_backward, rasterize_forward, GradientBuffer, RasterConfig, RenderOutput};
pub use view::View;
