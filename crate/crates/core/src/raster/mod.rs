//! Tile-based splatting with front-to-back alpha compositing, and its
//! analytic adjoint.
//!
//! Per pixel, Gaussians are visited in ascending camera depth (ties broken
//! by index) and composited as `C = Σ c_i α'_i T_i + T_N · background`,
//! where `α'_i = min(alpha_max, α_i G_i)` and `T_i = Π_{j<i} (1 - α'_j)`.
//! A Gaussian only touches pixels whose centers lie inside its 3σ
//! screen-space ellipse; tile binning uses the enclosing disk, so binned and
//! brute-force rendering agree.

mod backward;
mod tiles;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

pub use backward::{rasterize_backward, GradientBuffer};
pub use tiles::{tile_bin, TileGrid};

use crate::camera::{jacobian, Camera, LOW_PASS_VARIANCE};
use crate::gaussian::{covariance_from_rotation_scale, sh_color, sigmoid, GaussianCloud};
use crate::image::Image;
use crate::quat::{self, Quat};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RasterConfig {
    pub tile_size: usize,
    /// Upper clamp on the per-pixel opacity `α'`.
    pub alpha_max: f64,
    /// Contributions with `α'` below this are skipped.
    pub alpha_min: f64,
    /// Compositing stops once transmittance would drop below this.
    pub transmittance_min: f64,
    /// Screen-space support radius, in standard deviations.
    pub sigma_extent: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            tile_size: 16,
            alpha_max: 0.99,
            alpha_min: 1.0 / 255.0,
            transmittance_min: 1e-4,
            sigma_extent: 3.0,
        }
    }
}

/// A Gaussian after projection into one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    /// View-dependent color, clamped to `[0, 1]`.
    pub color_view: Vector3<f64>,
    pub opacity: f64,
    /// Radius of the disk enclosing the support ellipse, in pixels.
    pub radius: f64,
}

impl ProjectedGaussian {
    /// Exponent `-0.5 dᵀ Σ⁻¹ d` at pixel position `p`.
    #[inline]
    pub fn power(&self, p: Vector2<f64>) -> f64 {
        let d = p - self.mean2d;
        let k = &self.conic;
        -0.5 * (k[(0, 0)] * d.x * d.x + k[(1, 1)] * d.y * d.y) - k[(0, 1)] * d.x * d.y
    }
}

/// Intermediates kept per visible Gaussian for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct ProjectionCache {
    pub unit_rotation: Quat,
    pub rotation: Matrix3<f64>,
    pub scale: Vector3<f64>,
    pub x_cam: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub cov_cam: Matrix3<f64>,
    pub view_dir: Vector3<f64>,
    pub view_dist: f64,
    pub color_unclamped: Vector3<f64>,
}

/// Projects one Gaussian; `None` when culled by the near plane or when its
/// parameters are degenerate.
pub(crate) fn project_one(
    cloud: &GaussianCloud,
    i: usize,
    camera: &Camera,
    cfg: &RasterConfig,
) -> Option<(ProjectedGaussian, ProjectionCache)> {
    let mean = cloud.means[i];
    let x_cam = camera.world_to_camera(&mean);
    if x_cam.z <= camera.near_clip {
        return None;
    }
    let unit_rotation = quat::normalize(&cloud.rotations[i]).ok()?;
    let scale = cloud.scale(i);
    let cov3d = covariance_from_rotation_scale(&unit_rotation, &scale);
    let j = jacobian(camera.fx, camera.fy, &x_cam);
    let cov_cam = camera.rotation * cov3d * camera.rotation.transpose();
    let c = j * cov_cam * j.transpose();
    let off = 0.5 * (c[(0, 1)] + c[(1, 0)]);
    let cov2d = Matrix2::new(c[(0, 0)] + LOW_PASS_VARIANCE, off, off, c[(1, 1)] + LOW_PASS_VARIANCE);
    let det = cov2d.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = Matrix2::new(cov2d[(1, 1)], -off, -off, cov2d[(0, 0)]) / det;
    let mid = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    // slight inflation so the disk test never rejects a pixel the ellipse test accepts
    let radius = cfg.sigma_extent * lambda_max.sqrt() * (1.0 + 1e-9) + 1e-9;

    let v = mean - camera.center();
    let view_dist = v.norm();
    let view_dir = if view_dist > 0.0 { v / view_dist } else { Vector3::z() };
    let color_unclamped = sh_color(&cloud.sh[i], &view_dir);
    let color_view = color_unclamped.map(|x| x.clamp(0.0, 1.0));

    Some((
        ProjectedGaussian {
            mean2d: camera.project_camera_point(&x_cam),
            cov2d,
            conic,
            depth: x_cam.z,
            color_view,
            opacity: sigmoid(cloud.opacity_logits[i]),
            radius,
        },
        ProjectionCache {
            unit_rotation,
            rotation: quat::to_matrix(&unit_rotation),
            scale,
            x_cam,
            jacobian: j,
            cov_cam,
            view_dir,
            view_dist,
            color_unclamped,
        },
    ))
}

/// Projects every Gaussian of the cloud into the camera.
pub fn project_cloud(cloud: &GaussianCloud, camera: &Camera, cfg: &RasterConfig) -> Vec<Option<ProjectedGaussian>> {
    (0..cloud.len())
        .into_par_iter()
        .map(|i| project_one(cloud, i, camera, cfg).map(|(p, _)| p))
        .collect()
}

/// Evaluates the blend weight of one projected Gaussian at a pixel center;
/// `None` when the pixel lies outside its support or below the skip
/// threshold. Returns `(α', G, clamped)`.
#[inline]
pub(crate) fn blend_alpha(
    p: &ProjectedGaussian,
    pixel: Vector2<f64>,
    cfg: &RasterConfig,
    power_cutoff: f64,
) -> Option<(f64, f64, bool)> {
    let power = p.power(pixel);
    if power < power_cutoff {
        return None;
    }
    let g = power.exp();
    let raw = p.opacity * g;
    let clamped = raw > cfg.alpha_max;
    let alpha = if clamped { cfg.alpha_max } else { raw };
    if alpha < cfg.alpha_min {
        return None;
    }
    Some((alpha, g, clamped))
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    /// Accumulated opacity `1 - T_final` per pixel.
    pub alpha_map: Vec<f64>,
    /// Number of pixels each Gaussian contributed to.
    pub touch_count: Vec<u32>,
}

/// Everything the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct RenderContext {
    pub(crate) cloud: GaussianCloud,
    pub(crate) camera: Camera,
    pub(crate) cfg: RasterConfig,
    pub(crate) background: Vector3<f64>,
    pub(crate) projected: Vec<Option<ProjectedGaussian>>,
    pub(crate) caches: Vec<Option<ProjectionCache>>,
    pub(crate) grid: TileGrid,
    pub(crate) tiles: Vec<Vec<usize>>,
    /// Per pixel: final transmittance and the tile-list position one past
    /// the last Gaussian that was visited.
    pub(crate) final_t: Vec<f64>,
    pub(crate) stop: Vec<u32>,
}

impl RenderContext {
    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    pub fn gaussian_count(&self) -> usize {
        self.cloud.len()
    }
}

struct TileResult {
    pixels: Vec<(usize, Vector3<f64>, f64, u32)>,
    touches: Vec<(usize, u32)>,
}

/// Renders the cloud; returns the image and the context for
/// [`rasterize_backward`].
pub fn rasterize_forward(
    cloud: &GaussianCloud,
    camera: &Camera,
    background: Vector3<f64>,
    cfg: &RasterConfig,
) -> (RenderOutput, RenderContext) {
    let (width, height) = (camera.width, camera.height);
    let (projected, caches): (Vec<_>, Vec<_>) = (0..cloud.len())
        .into_par_iter()
        .map(|i| match project_one(cloud, i, camera, cfg) {
            Some((p, c)) => (Some(p), Some(c)),
            None => (None, None),
        })
        .unzip();
    let grid = TileGrid::new(width, height, cfg.tile_size);
    let tiles = tile_bin(&projected, &grid);
    let power_cutoff = -0.5 * cfg.sigma_extent * cfg.sigma_extent;

    let results: Vec<TileResult> = tiles
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let (x0, y0, x1, y1) = grid.tile_pixels(t);
            let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0));
            let mut touched = vec![0u32; list.len()];
            for py in y0..y1 {
                for px in x0..x1 {
                    let center = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
                    let mut transmittance = 1.0;
                    let mut color = Vector3::zeros();
                    let mut stop = list.len() as u32;
                    for (k, &gi) in list.iter().enumerate() {
                        let p = projected[gi].as_ref().expect("binned gaussians are visible");
                        let Some((alpha, _, _)) = blend_alpha(p, center, cfg, power_cutoff) else {
                            continue;
                        };
                        let next_t = transmittance * (1.0 - alpha);
                        if next_t < cfg.transmittance_min {
                            stop = k as u32;
                            break;
                        }
                        color += p.color_view * (alpha * transmittance);
                        transmittance = next_t;
                        touched[k] += 1;
                    }
                    color += background * transmittance;
                    pixels.push((py * width + px, color, transmittance, stop));
                }
            }
            let touches = list
                .iter()
                .zip(touched)
                .filter(|(_, n)| *n > 0)
                .map(|(&gi, n)| (gi, n))
                .collect();
            TileResult { pixels, touches }
        })
        .collect();

    let mut image = Image::new(width, height);
    let mut alpha_map = vec![0.0; width * height];
    let mut final_t = vec![1.0; width * height];
    let mut stop = vec![0u32; width * height];
    let mut touch_count = vec![0u32; cloud.len()];
    for r in results {
        for (pix, c, t, s) in r.pixels {
            image.data[pix * 3..pix * 3 + 3].copy_from_slice(c.as_slice());
            alpha_map[pix] = 1.0 - t;
            final_t[pix] = t;
            stop[pix] = s;
        }
        for (gi, n) in r.touches {
            touch_count[gi] += n;
        }
    }

    let ctx = RenderContext {
        cloud: cloud.clone(),
        camera: camera.clone(),
        cfg: cfg.clone(),
        background,
        projected,
        caches,
        grid,
        tiles,
        final_t,
        stop,
    };
    (
        RenderOutput {
            image,
            alpha_map,
            touch_count,
        },
        ctx,
    )
}

/// Forward-only convenience wrapper.
pub fn render(cloud: &GaussianCloud, camera: &Camera, background: Vector3<f64>, cfg: &RasterConfig) -> Image {
    rasterize_forward(cloud, camera, background, cfg).0.image
}

/// Clamped view-dependent color of Gaussian `i` as seen from `camera`.
pub fn view_color(cloud: &GaussianCloud, i: usize, camera: &Camera) -> Vector3<f64> {
    let v = cloud.means[i] - camera.center();
    sh_color(&cloud.sh[i], &v.normalize()).map(|x| x.clamp(0.0, 1.0))
}
