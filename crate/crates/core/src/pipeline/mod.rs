//! The streaming pipeline: frame-0 reconstruction, the per-frame
//! two-stage update (train the transformation cache, then add
//! frame-specific Gaussians), stream emission, and playback.

mod frame;
mod frame0;
mod playback;
mod stream;

pub use frame::{process_frame, FrameOutput, FrameStats};
pub use frame0::{init_cloud_from_points, scene_extent, train_frame0, Frame0Report};
pub use playback::{playback_render, Player};
pub use stream::{fit_aabb, mean_psnr, process_stream, resume_stream, train_initial, FrameEvent, StreamSummary};

/// Decorrelated seed for one (frame, purpose) pair.
pub(crate) fn derive_seed(seed: u64, frame: usize, purpose: u64) -> u64 {
    let mut z = seed ^ (frame as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ purpose.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
