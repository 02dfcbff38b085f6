//! Frame-specific additional Gaussians: selection by view-space gradient,
//! spawning near the selected Gaussians, stage-2 optimization with the
//! transformed cloud frozen, and per-epoch quantity control.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{logit, GaussianCloud};
use crate::optim::{AdamConfig, GaussianAdam, GaussianLrs};
use crate::quat;
use crate::raster::GradientBuffer;
use crate::train::{loss_step, RenderSettings, ViewSchedule};
use crate::view::View;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdditionConfig {
    pub tau_grad: f64,
    pub tau_alpha: f64,
    pub spawn_cov_scale: f64,
    pub split_scale_factor: f64,
    /// Whether a split also shrinks the source Gaussian.
    pub split_scales_source: bool,
    pub init_opacity: f64,
    /// Opacity pruning after each epoch's split. Off reproduces the "no
    /// quantity control" ablation: splits continue and nothing is discarded.
    pub quantity_control: bool,
    pub lrs: GaussianLrs,
    pub adam: AdamConfig,
}

impl Default for AdditionConfig {
    fn default() -> Self {
        AdditionConfig {
            tau_grad: 0.00015,
            tau_alpha: 0.01,
            spawn_cov_scale: 2.0,
            split_scale_factor: 0.8,
            split_scales_source: true,
            init_opacity: 0.1,
            quantity_control: true,
            lrs: GaussianLrs {
                mean: 0.0024,
                sh: 0.0375,
                opacity: 0.75,
                scale: 0.075,
                rotation: 0.015,
            },
            adam: AdamConfig::default(),
        }
    }
}

impl AdditionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_grad > 0.0) {
            return Err(Error::Config("tau_grad must be positive".into()));
        }
        if !(self.tau_alpha > 0.0 && self.tau_alpha < 1.0) {
            return Err(Error::Config("tau_alpha must lie in (0, 1)".into()));
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return Err(Error::Config("init_opacity must lie in (0, 1)".into()));
        }
        if !(self.spawn_cov_scale >= 0.0) || !(self.split_scale_factor > 0.0) {
            return Err(Error::Config(
                "spawn_cov_scale and split_scale_factor must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Indices whose average view-space gradient magnitude exceeds `tau_grad`.
pub fn select_high_gradient(grads: &GradientBuffer, tau_grad: f64) -> Vec<usize> {
    (0..grads.len())
        .filter(|&i| grads.average_viewspace(i) > tau_grad)
        .collect()
}

/// A draw from `N(μ_i, c Σ_i)`, using the factor `√c R S` of `c Σ`.
pub fn sample_near(cloud: &GaussianCloud, i: usize, cov_scale: f64, rng: &mut ChaCha8Rng) -> Result<Vector3<f64>> {
    let r = quat::to_matrix(&quat::normalize(&cloud.rotations[i])?);
    let factor = r * Matrix3::from_diagonal(&cloud.scale(i)) * cov_scale.sqrt();
    let z = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
    Ok(cloud.means[i] + factor * z)
}

/// One new Gaussian per selected source: position drawn from
/// `N(μ, spawn_cov_scale · Σ)`, SH and scale copied, identity rotation and
/// opacity `init_opacity`.
pub fn spawn_gaussians(
    cloud: &GaussianCloud,
    selected: &[usize],
    cfg: &AdditionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GaussianCloud> {
    let mut out = GaussianCloud::with_capacity(selected.len());
    let o = logit(cfg.init_opacity);
    for &i in selected {
        let mut g = cloud.get(i);
        g.mean = sample_near(cloud, i, cfg.spawn_cov_scale, rng)?;
        g.rotation = quat::IDENTITY;
        g.opacity_logit = o;
        out.push(g);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QuantityReport {
    pub split: usize,
    pub pruned: usize,
}

/// End-of-epoch quantity control on the additional Gaussians: split those
/// whose average view-space gradient (over `stats`) exceeds `tau_grad`, then
/// prune everything below `tau_alpha` opacity (unless `quantity_control` is
/// off). `adam` is kept row-aligned.
pub fn quantity_control_epoch(
    additional: &mut GaussianCloud,
    adam: &mut GaussianAdam,
    stats: &GradientBuffer,
    cfg: &AdditionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<QuantityReport> {
    assert_eq!(stats.len(), additional.len());
    let selected = select_high_gradient(stats, cfg.tau_grad);
    let shrink = cfg.split_scale_factor.ln();
    let mut children = GaussianCloud::with_capacity(selected.len());
    for &i in &selected {
        let mut g = additional.get(i);
        g.mean = sample_near(additional, i, cfg.spawn_cov_scale, rng)?;
        g.log_scale = additional.log_scales[i].add_scalar(shrink);
        children.push(g);
    }
    if cfg.split_scales_source {
        for &i in &selected {
            additional.log_scales[i] = additional.log_scales[i].add_scalar(shrink);
        }
    }
    additional.extend(&children);
    adam.push_zeros(children.len());

    let keep: Vec<bool> = (0..additional.len())
        .map(|i| !cfg.quantity_control || additional.opacity(i) >= cfg.tau_alpha)
        .collect();
    let pruned = keep.iter().filter(|&&k| !k).count();
    additional.retain_mask(&keep);
    adam.retain(&keep);
    Ok(QuantityReport {
        split: selected.len(),
        pruned,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stage2Report {
    pub iterations: usize,
    pub epochs: usize,
    pub last_loss: Option<f64>,
    pub split: usize,
    pub pruned: usize,
    /// Largest count at any point, including just after a split.
    pub peak_count: usize,
}

/// Optimizes `additional` against `views` with `transformed` rendered
/// alongside but never updated. Quantity control runs after every full
/// pass over the views.
pub fn stage2_optimize(
    transformed: &GaussianCloud,
    mut additional: GaussianCloud,
    views: &[View],
    cfg: &AdditionConfig,
    iterations: usize,
    seed: u64,
    render: &RenderSettings,
) -> Result<(GaussianCloud, Stage2Report)> {
    let mut report = Stage2Report {
        peak_count: additional.len(),
        ..Default::default()
    };
    if iterations == 0 || additional.is_empty() {
        return Ok((additional, report));
    }
    if views.is_empty() {
        return Err(Error::Dataset("stage 2 needs at least one view".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut schedule = ViewSchedule::new(views.len(), seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = GaussianAdam::zeros(additional.len());
    let base = transformed.len();
    let mut stats = GradientBuffer::zeros(additional.len());
    for _ in 0..iterations {
        if additional.is_empty() {
            break;
        }
        let (v, epoch_end) = schedule.next_view();
        let scene = transformed.union(&additional);
        let step = loss_step(&scene, &views[v], render)?;
        for k in 0..additional.len() {
            stats.viewspace_grad_norm_accum[k] += step.grads.viewspace_grad_norm_accum[base + k];
            stats.viewspace_grad_count[k] += step.grads.viewspace_grad_count[base + k];
        }
        adam.step(&mut additional, &step.grads, base, &cfg.lrs, &cfg.adam);
        if let Some(t) = additional.first_non_finite() {
            return Err(Error::NonFinite {
                tensor: format!("additional gaussian {t}"),
            });
        }
        report.iterations += 1;
        report.last_loss = Some(step.loss);
        if epoch_end {
            report.epochs += 1;
            let before = additional.len();
            let q = quantity_control_epoch(&mut additional, &mut adam, &stats, cfg, &mut rng)?;
            report.peak_count = report.peak_count.max(before + q.split);
            report.split += q.split;
            report.pruned += q.pruned;
            stats = GradientBuffer::zeros(additional.len());
        }
        report.peak_count = report.peak_count.max(additional.len());
    }
    Ok((additional, report))
}
