use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::addition::{select_high_gradient, spawn_gaussians, stage2_optimize};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::io::FrameRecord;
use crate::ntc::NeuralTransformationCache;
use crate::raster::GradientBuffer;
use crate::train::{loss_step, ViewSchedule};
use crate::transform::{apply_deltas, apply_deltas_backward, covered_indices, TransformOptions, TransformedGrads};
use crate::view::View;

use super::derive_seed;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameStats {
    pub frame: usize,
    /// Gaussians inside the cache's bounding box.
    pub covered: usize,
    pub stage1_first_loss: Option<f64>,
    pub stage1_last_loss: Option<f64>,
    pub stage2_last_loss: Option<f64>,
    pub selected: usize,
    pub spawned: usize,
    pub additional: usize,
    pub split: usize,
    pub pruned: usize,
    /// Largest additional count seen during stage 2.
    pub peak_additional: usize,
    pub stage1_seconds: f64,
    pub stage2_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub record: FrameRecord,
    /// The previous cloud moved by this frame's cache; carried forward.
    pub transformed: GaussianCloud,
    pub additional: GaussianCloud,
    pub cache: NeuralTransformationCache,
    pub stats: FrameStats,
}

impl FrameOutput {
    /// Gaussians rendered for this frame.
    pub fn render_set(&self) -> GaussianCloud {
        self.transformed.union(&self.additional)
    }
}

/// Runs both stages for one frame. `prev` must hold exactly the values a
/// player reconstructs (f32-representable inputs), which keeps training and
/// replay bit-identical.
pub fn process_frame(
    prev: &GaussianCloud,
    warm: &NeuralTransformationCache,
    views: &[View],
    cfg: &PipelineConfig,
    frame_index: usize,
) -> Result<FrameOutput> {
    if prev.is_empty() {
        return Err(Error::Dataset("previous frame has no gaussians".into()));
    }
    if views.is_empty() {
        return Err(Error::Dataset(format!("frame {frame_index} has no training views")));
    }
    let opts = TransformOptions {
        rotate_sh: cfg.rotate_sh,
    };
    let mut stats = FrameStats {
        frame: frame_index,
        ..Default::default()
    };

    // Stage 1: fit the cache with the previous cloud frozen. Its inputs are
    // fixed for the whole stage, so the encoding stencils are built once.
    let t0 = Instant::now();
    let mut cache = warm.snapshot();
    let idx = covered_indices(prev, &cache);
    stats.covered = idx.len();
    let means: Vec<Vector3<f64>> = idx.iter().map(|&i| prev.means[i]).collect();
    let batch = cache.prepare(&means)?;
    let mut schedule = ViewSchedule::new(views.len(), derive_seed(cfg.seed, frame_index, 10));
    let window_start = cfg.stage1_iterations.saturating_sub(views.len());
    let mut vs = GradientBuffer::zeros(prev.len());
    for it in 0..cfg.stage1_iterations {
        let (v, _) = schedule.next_view();
        let (out, tape) = cache.forward(&batch);
        let moved = apply_deltas(prev, &idx, &out, &opts)?;
        let step = loss_step(&moved, &views[v], &cfg.render)?;
        if it >= window_start {
            vs.accumulate_viewspace(&step.grads);
        }
        if it == 0 {
            stats.stage1_first_loss = Some(step.loss);
        }
        stats.stage1_last_loss = Some(step.loss);
        let (g_mu, g_q) = apply_deltas_backward(
            prev,
            &idx,
            &out,
            &TransformedGrads {
                d_mean: &step.grads.d_mean,
                d_rotation: &step.grads.d_rotation,
                d_sh: &step.grads.d_sh,
            },
            &opts,
        )?;
        let grads = cache.backward(&batch, &tape, &g_mu, &g_q)?;
        cache.adam_step(&grads, cfg.ntc_lr, &cfg.adam);
        if let Some(t) = cache.first_non_finite() {
            return Err(Error::NonFinite {
                tensor: format!("{t} (frame {frame_index}, stage 1 iteration {it})"),
            });
        }
    }
    cache.quantize_f32();
    let out = cache.forward(&batch).0;
    let transformed = apply_deltas(prev, &idx, &out, &opts)?;
    if let Some(t) = transformed.first_non_finite() {
        return Err(Error::NonFinite {
            tensor: format!("transformed {t} (frame {frame_index})"),
        });
    }
    stats.stage1_seconds = t0.elapsed().as_secs_f64();

    // Stage 2: frame-specific Gaussians around under-fitted regions.
    let t1 = Instant::now();
    let mut additional = GaussianCloud::new();
    if cfg.stage2_iterations > 0 && cfg.stage1_iterations > 0 {
        let selected = select_high_gradient(&vs, cfg.addition.tau_grad);
        stats.selected = selected.len();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, frame_index, 11));
        let spawned = spawn_gaussians(&transformed, &selected, &cfg.addition, &mut rng)?;
        stats.spawned = spawned.len();
        let (opt, rep) = stage2_optimize(
            &transformed,
            spawned,
            views,
            &cfg.addition,
            cfg.stage2_iterations,
            derive_seed(cfg.seed, frame_index, 12),
            &cfg.render,
        )?;
        additional = opt;
        stats.split = rep.split;
        stats.pruned = rep.pruned;
        stats.peak_additional = rep.peak_count;
        stats.stage2_last_loss = rep.last_loss;
    }
    additional.quantize_f32();
    stats.additional = additional.len();
    stats.stage2_seconds = t1.elapsed().as_secs_f64();

    let record = FrameRecord {
        frame_index,
        ntc_blob: cache.to_blob(),
        additional: additional.clone(),
    };
    Ok(FrameOutput {
        record,
        transformed,
        additional,
        cache,
        stats,
    })
}
