//! Shared pieces of the training loops: one render-loss-backward step and
//! the per-epoch view schedule.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::image::Image;
use crate::loss::{render_loss, LossConfig};
use crate::raster::{rasterize_backward, rasterize_forward, GradientBuffer, RasterConfig};
use crate::view::View;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    pub background: [f64; 3],
    pub raster: RasterConfig,
    pub loss: LossConfig,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            background: [0.0; 3],
            raster: RasterConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl RenderSettings {
    pub fn background(&self) -> Vector3<f64> {
        Vector3::from(self.background)
    }
}

pub struct StepResult {
    pub loss: f64,
    pub grads: GradientBuffer,
    pub image: Image,
}

/// Renders `cloud` into `view`, evaluates the image loss and backpropagates
/// it to every Gaussian.
pub fn loss_step(cloud: &GaussianCloud, view: &View, s: &RenderSettings) -> Result<StepResult> {
    let (out, ctx) = rasterize_forward(cloud, &view.camera, s.background(), &s.raster);
    let (loss, d_image) = render_loss(&out.image, &view.image, &s.loss)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            tensor: "render loss".into(),
        });
    }
    let grads = rasterize_backward(&ctx, &d_image)?;
    Ok(StepResult {
        loss,
        grads,
        image: out.image,
    })
}

/// Cycles through `n` views, reshuffling with a seeded RNG at the start of
/// every epoch.
#[derive(Debug, Clone)]
pub struct ViewSchedule {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl ViewSchedule {
    pub fn new(n: usize, seed: u64) -> Self {
        ViewSchedule {
            order: (0..n).collect(),
            pos: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn epoch_len(&self) -> usize {
        self.order.len()
    }

    /// Next view index and whether it closes an epoch.
    pub fn next_view(&mut self) -> (usize, bool) {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let v = self.order[self.pos];
        self.pos += 1;
        (v, self.pos == self.order.len())
    }
}
