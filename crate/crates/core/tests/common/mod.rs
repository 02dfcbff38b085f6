#![allow(dead_code)]

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatstream_core::gaussian::{logit, rgb_to_sh_dc, Gaussian, GaussianCloud};
use splatstream_core::image::Image;
use splatstream_core::raster::{rasterize_backward, rasterize_forward, render, RasterConfig};
use splatstream_core::Camera;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn front_camera(size: usize, focal: f64, distance: f64) -> Camera {
    Camera::look_at(
        size,
        size,
        focal,
        Vector3::new(0.0, 0.0, -distance),
        Vector3::zeros(),
        -Vector3::y(),
    )
    .unwrap()
}

pub fn random_quat(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let q = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n: f64 = q.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        if n > 0.3 {
            // deliberately left unnormalized
            return q;
        }
    }
}

/// Gaussian with a mid-range color and small view-dependent terms.
pub fn random_gaussian(
    rng: &mut impl Rng,
    center_spread: f64,
    log_scale: std::ops::Range<f64>,
    opacity: std::ops::Range<f64>,
) -> Gaussian {
    let rgb = Vector3::new(
        rng.random_range(0.25..0.75),
        rng.random_range(0.25..0.75),
        rng.random_range(0.25..0.75),
    );
    let mut sh = [Vector3::zeros(); 4];
    sh[0] = rgb_to_sh_dc(&rgb);
    for coeff in sh.iter_mut().skip(1) {
        *coeff = Vector3::new(
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
        );
    }
    Gaussian {
        mean: Vector3::new(
            rng.random_range(-center_spread..center_spread),
            rng.random_range(-center_spread..center_spread),
            rng.random_range(-center_spread..center_spread),
        ),
        rotation: random_quat(rng),
        log_scale: Vector3::new(
            rng.random_range(log_scale.clone()),
            rng.random_range(log_scale.clone()),
            rng.random_range(log_scale),
        ),
        opacity_logit: logit(rng.random_range(opacity)),
        sh,
    }
}

/// Five broad, overlapping Gaussians on a 32×32 view. Every support
/// ellipse covers the whole image, no opacity reaches the clamp, and
/// transmittance stays well above the early-stop level, so the rendered
/// image is a smooth function of every parameter.
pub fn smooth_five_gaussian_scene(seed: u64) -> (GaussianCloud, Camera) {
    let mut r = rng(seed);
    let cloud = (0..5)
        .map(|_| random_gaussian(&mut r, 0.2, 0.0..0.3, 0.3..0.6))
        .collect();
    (cloud, front_camera(32, 40.0, 4.0))
}

pub fn random_weights(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// `|a - b| <= max(rel * |b|, abs)`.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= (rel * b.abs()).max(abs)
}

/// Tiny NTC (2 levels, 2 features, 16 slots, one hidden layer of 8) with
/// every parameter randomized so gradients are non-trivial.
pub fn tiny_ntc(seed: u64) -> splatstream_core::NeuralTransformationCache {
    use splatstream_core::{HashGridConfig, NeuralTransformationCache, NtcConfig};
    let cfg = NtcConfig {
        grid: HashGridConfig::with_finest_resolution(2, 2, 4, 2, 6, [-1.0; 3], [1.0; 3]),
        hidden: vec![8],
    };
    let mut c = NeuralTransformationCache::new(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    c.tables.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
    for l in &mut c.mlp.layers {
        l.weights.iter_mut().for_each(|v| *v = r.random_range(-0.8..0.8));
    }
    c
}

/// Outcome of a finite-difference sweep.
pub struct GradCheck {
    pub checked: usize,
    pub failures: Vec<String>,
}

/// Central differences (step `h`) of a random linear functional of the NTC
/// outputs against the analytic backward pass, for every table entry and
/// MLP parameter.
pub fn ntc_gradient_check(seed: u64, h: f64, rel: f64, abs: f64) -> GradCheck {
    let cache = tiny_ntc(seed);
    let mut r = rng(seed + 1);
    let pts: Vec<Vector3<f64>> = (0..6)
        .map(|_| {
            Vector3::new(
                r.random_range(-0.95..0.95),
                r.random_range(-0.95..0.95),
                r.random_range(-0.95..0.95),
            )
        })
        .collect();
    let a: Vec<Vector3<f64>> = pts
        .iter()
        .map(|_| {
            Vector3::new(
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
            )
        })
        .collect();
    let b: Vec<[f64; 4]> = pts
        .iter()
        .map(|_| std::array::from_fn(|_| r.random_range(-1.0..1.0)))
        .collect();
    let objective = |c: &splatstream_core::NeuralTransformationCache| -> f64 {
        let out = c.evaluate(&pts).unwrap();
        let mut s = 0.0;
        for i in 0..pts.len() {
            s += out.d_mu[i].dot(&a[i]);
            s += (0..4).map(|k| out.d_q[i][k] * b[i][k]).sum::<f64>();
        }
        s
    };
    let batch = cache.prepare(&pts).unwrap();
    let (_, tape) = cache.forward(&batch);
    let g = cache.backward(&batch, &tape, &a, &b).unwrap();
    let mut failures = Vec::new();
    let mut checked = 0;
    for i in 0..cache.tables.len() {
        let mut p = cache.clone();
        p.tables[i] += h;
        let mut m = cache.clone();
        m.tables[i] -= h;
        let fd = (objective(&p) - objective(&m)) / (2.0 * h);
        checked += 1;
        if !close(fd, g.tables[i], rel, abs) {
            failures.push(format!("table[{i}]: fd {fd:.6e} vs analytic {:.6e}", g.tables[i]));
        }
    }
    let flat = cache.mlp.flatten();
    let gflat = g.mlp.flatten();
    for i in 0..flat.len() {
        let mut q = flat.clone();
        q[i] += h;
        let mut p = cache.clone();
        p.mlp.unflatten(&q);
        q[i] -= 2.0 * h;
        let mut m = cache.clone();
        m.mlp.unflatten(&q);
        let fd = (objective(&p) - objective(&m)) / (2.0 * h);
        checked += 1;
        if !close(fd, gflat[i], rel, abs) {
            failures.push(format!("mlp[{i}]: fd {fd:.6e} vs analytic {:.6e}", gflat[i]));
        }
    }
    GradCheck { checked, failures }
}

/// Renders a scene, moves it by a random global rigid motion through the
/// deformation stub, renders again from the correspondingly moved camera,
/// and returns the largest per-channel difference.
pub fn rigid_equivariance_max_diff(seed: u64) -> f64 {
    use splatstream_core::raster::render;
    use splatstream_core::transform::{apply_deformation, RigidMotion, TransformOptions};
    use splatstream_core::RasterConfig;
    let mut r = rng(seed);
    let cloud: GaussianCloud = (0..24)
        .map(|_| random_gaussian(&mut r, 0.8, -2.5..-1.2, 0.3..0.9))
        .collect();
    let cam = Camera::look_at(
        48,
        40,
        45.0,
        Vector3::new(0.6, -0.4, -4.0),
        Vector3::zeros(),
        -Vector3::y(),
    )
    .unwrap();
    let q = splatstream_core::quat::normalize(&random_quat(&mut r)).unwrap();
    let motion = RigidMotion {
        rotation: splatstream_core::quat::to_matrix(&q),
        translation: Vector3::new(
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        ),
    };
    let bg = Vector3::new(0.1, 0.2, 0.3);
    let cfg = RasterConfig::default();
    let before = render(&cloud, &cam, bg, &cfg);
    let moved = apply_deformation(&cloud, &motion, &TransformOptions::default()).unwrap();
    let cam2 = cam.compose_inverse_motion(&motion.rotation, &motion.translation);
    let after = render(&moved, &cam2, bg, &cfg);
    before.max_abs_diff(&after)
}

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 2e-2;
pub const FD_ABS_TOL: f64 = 1e-6;

pub fn weighted_loss(cloud: &GaussianCloud, cam: &Camera, bg: Vector3<f64>, w: &Image) -> f64 {
    let img = render(cloud, cam, bg, &RasterConfig::default());
    img.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
}

/// Visits every scalar raw parameter of Gaussian `i`.
fn for_each_param(
    cloud: &mut GaussianCloud,
    i: usize,
    mut f: impl FnMut(&str, &mut GaussianCloud, &dyn Fn(&mut GaussianCloud) -> &mut f64),
) {
    for k in 0..3 {
        f("mean", cloud, &move |c: &mut GaussianCloud| &mut c.means[i][k]);
    }
    for k in 0..4 {
        f("rotation", cloud, &move |c: &mut GaussianCloud| &mut c.rotations[i][k]);
    }
    for k in 0..3 {
        f("log_scale", cloud, &move |c: &mut GaussianCloud| {
            &mut c.log_scales[i][k]
        });
    }
    f("opacity_logit", cloud, &move |c: &mut GaussianCloud| {
        &mut c.opacity_logits[i]
    });
    for j in 0..4 {
        for k in 0..3 {
            f("sh", cloud, &move |c: &mut GaussianCloud| &mut c.sh[i][j][k]);
        }
    }
}

/// Every raw parameter gradient of the 5-Gaussian 32×32 scene against
/// central differences of a random linear functional of the image.
pub fn raster_gradient_check(seed: u64, bg: Vector3<f64>) -> GradCheck {
    let (cloud, cam) = smooth_five_gaussian_scene(seed);
    let mut r = rng(seed + 1000);
    let w = Image::from_data(32, 32, random_weights(&mut r, 32 * 32 * 3)).unwrap();
    let (_, ctx) = rasterize_forward(&cloud, &cam, bg, &RasterConfig::default());
    let g = rasterize_backward(&ctx, &w).unwrap();

    let mut checked = 0;
    let mut failures = Vec::new();
    for i in 0..cloud.len() {
        let analytic: Vec<f64> = g.d_mean[i]
            .iter()
            .copied()
            .chain(g.d_rotation[i])
            .chain(g.d_log_scale[i].iter().copied())
            .chain([g.d_opacity_logit[i]])
            .chain(g.d_sh[i].iter().flat_map(|c| c.iter().copied()))
            .collect();
        let mut k = 0;
        let mut work = cloud.clone();
        for_each_param(&mut work, i, |name, c, slot| {
            let orig = *slot(c);
            *slot(c) = orig + FD_STEP;
            let fp = weighted_loss(c, &cam, bg, &w);
            *slot(c) = orig - FD_STEP;
            let fm = weighted_loss(c, &cam, bg, &w);
            *slot(c) = orig;
            let fd = (fp - fm) / (2.0 * FD_STEP);
            if !close(analytic[k], fd, FD_REL_TOL, FD_ABS_TOL) {
                failures.push(format!(
                    "seed {seed} gaussian {i} {name}[{k}]: analytic {} vs fd {fd}",
                    analytic[k]
                ));
            }
            k += 1;
            checked += 1;
        });
    }
    GradCheck { checked, failures }
}

/// A very small emerging-object scene (24 px, four cameras) that streams in
/// a couple of seconds.
pub fn tiny_scene_params(frames: usize, emerge_at: usize) -> splatstream_core::synth::SynthParams {
    let mut p = splatstream_core::synth::SynthParams::emerging_scene(frames, emerge_at);
    p.width = 24;
    p.height = 24;
    p.focal = 30.0;
    p.cameras = 4;
    p.test_stride = 4;
    p
}

pub fn tiny_config() -> splatstream_core::PipelineConfig {
    let mut cfg = splatstream_core::PipelineConfig::desk();
    cfg.frame0.iterations = 60;
    cfg.frame0.densify_from = 20;
    cfg.frame0.densify_until = 50;
    cfg.frame0.densify_interval = 10;
    cfg.warmup_iterations = 30;
    cfg.stage1_iterations = 12;
    cfg.stage2_iterations = 9;
    cfg
}

pub fn tiny_dataset(dir: &std::path::Path, frames: usize, emerge_at: usize) -> splatstream_core::io::Dataset {
    let m = splatstream_core::synth::generate(&tiny_scene_params(frames, emerge_at), dir).unwrap();
    splatstream_core::io::Dataset::load(&m).unwrap()
}

pub fn stream_bytes(ds: &splatstream_core::io::Dataset, cfg: &splatstream_core::PipelineConfig) -> Vec<u8> {
    let mut out = Vec::new();
    splatstream_core::pipeline::process_stream(ds, cfg, &mut out, &mut |_| {}).unwrap();
    out
}
