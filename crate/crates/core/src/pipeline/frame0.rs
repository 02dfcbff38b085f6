use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::addition::sample_near;
use crate::camera::Camera;
use crate::config::{Frame0Config, PipelineConfig};
use crate::error::{Error, Result};
use crate::gaussian::{logit, rgb_to_sh_dc, Gaussian, GaussianCloud};
use crate::optim::{GaussianAdam, GaussianLrs};
use crate::quat;
use crate::raster::GradientBuffer;
use crate::train::{loss_step, ViewSchedule};
use crate::view::View;

use super::derive_seed;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frame0Report {
    pub iterations: usize,
    pub last_loss: Option<f64>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Radius of the sphere around the camera centers' centroid, enlarged by
/// 10%; the length unit for position learning rates and densification.
pub fn scene_extent(cameras: &[Camera]) -> f64 {
    if cameras.is_empty() {
        return 1.0;
    }
    let centers: Vec<Vector3<f64>> = cameras.iter().map(Camera::center).collect();
    let mid = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mid).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

/// One isotropic Gaussian per point, sized by the mean distance to its
/// three nearest neighbours.
pub fn init_cloud_from_points(points: &[(Vector3<f64>, Vector3<f64>)], opacity: f64) -> GaussianCloud {
    let mut cloud = GaussianCloud::with_capacity(points.len());
    for (i, (p, c)) in points.iter().enumerate() {
        let mut d: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, (q, _))| (p - q).norm_squared())
            .collect();
        let k = d.len().min(3);
        let scale = if k == 0 {
            0.01
        } else {
            d.select_nth_unstable_by(k - 1, f64::total_cmp);
            (d[..k].iter().sum::<f64>() / k as f64).sqrt().max(1e-4)
        };
        let mut sh = [Vector3::zeros(); 4];
        sh[0] = rgb_to_sh_dc(c);
        cloud.push(Gaussian {
            mean: *p,
            rotation: quat::IDENTITY,
            log_scale: Vector3::repeat(scale.ln()),
            opacity_logit: logit(opacity),
            sh,
        });
    }
    cloud
}

fn mean_lr(cfg: &Frame0Config, extent: f64, it: usize) -> f64 {
    let t = if cfg.iterations > 1 {
        it as f64 / (cfg.iterations - 1) as f64
    } else {
        0.0
    };
    let start = cfg.lrs.mean * extent;
    let end = start * cfg.mean_lr_final_ratio;
    (start.ln() * (1.0 - t) + end.ln() * t).exp()
}

/// Clone small and split large high-gradient Gaussians, then prune the
/// transparent ones.
fn densify_and_prune(
    cloud: &mut GaussianCloud,
    adam: &mut GaussianAdam,
    stats: &GradientBuffer,
    cfg: &Frame0Config,
    extent: f64,
    rng: &mut ChaCha8Rng,
    report: &mut Frame0Report,
) -> Result<()> {
    let n = cloud.len();
    let mut keep = vec![true; n];
    let mut born = GaussianCloud::new();
    let room = cfg.max_gaussians.saturating_sub(n);
    for i in 0..n {
        if born.len() + 2 > room {
            break;
        }
        if stats.average_viewspace(i) < cfg.densify_grad_threshold {
            continue;
        }
        let big = cloud.scale(i).max() > cfg.percent_dense * extent;
        if big {
            let shrink = (1.0f64 / 1.6).ln();
            for _ in 0..2 {
                let mut g = cloud.get(i);
                g.mean = sample_near(cloud, i, 1.0, rng)?;
                g.log_scale = g.log_scale.add_scalar(shrink);
                born.push(g);
            }
            keep[i] = false;
            report.split += 1;
        } else {
            born.push(cloud.get(i));
            report.cloned += 1;
        }
    }
    cloud.extend(&born);
    adam.push_zeros(born.len());
    keep.resize(cloud.len(), true);
    for (i, k) in keep.iter_mut().enumerate() {
        if cloud.opacity(i) < cfg.prune_opacity {
            *k = false;
        }
    }
    report.pruned += keep.iter().filter(|&&k| !k).count();
    cloud.retain_mask(&keep);
    adam.retain(&keep);
    Ok(())
}

/// Fits the frame-0 cloud to the training views, starting from `init`.
pub fn train_frame0(
    views: &[View],
    init: GaussianCloud,
    cfg: &PipelineConfig,
) -> Result<(GaussianCloud, Frame0Report)> {
    let f0 = &cfg.frame0;
    let mut report = Frame0Report::default();
    if f0.iterations == 0 {
        return Ok((init, report));
    }
    if views.is_empty() {
        return Err(Error::Dataset("frame 0 has no training views".into()));
    }
    if init.is_empty() {
        return Err(Error::Dataset("frame 0 needs a non-empty initial point set".into()));
    }
    let cameras: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
    let extent = scene_extent(&cameras);
    let mut cloud = init;
    let mut adam = GaussianAdam::zeros(cloud.len());
    let mut schedule = ViewSchedule::new(views.len(), derive_seed(cfg.seed, 0, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0, 2));
    let mut stats = GradientBuffer::zeros(cloud.len());
    for it in 0..f0.iterations {
        let (v, _) = schedule.next_view();
        let step = loss_step(&cloud, &views[v], &cfg.render)?;
        stats.accumulate_viewspace(&step.grads);
        let lrs = GaussianLrs {
            mean: mean_lr(f0, extent, it),
            ..f0.lrs
        };
        adam.step(&mut cloud, &step.grads, 0, &lrs, &cfg.adam);
        if let Some(t) = cloud.first_non_finite() {
            return Err(Error::NonFinite {
                tensor: format!("frame-0 gaussian {t}"),
            });
        }
        report.iterations += 1;
        report.last_loss = Some(step.loss);
        let done = it + 1;
        if done >= f0.densify_from && done <= f0.densify_until && done % f0.densify_interval == 0 {
            densify_and_prune(&mut cloud, &mut adam, &stats, f0, extent, &mut rng, &mut report)?;
            stats = GradientBuffer::zeros(cloud.len());
        }
    }
    Ok((cloud, report))
}
