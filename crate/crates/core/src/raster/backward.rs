use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::{blend_alpha, RenderContext};
use crate::error::{Error, Result};
use crate::gaussian::{sh_basis, Sh, SH_C0, SH_C1};
use crate::image::Image;
use crate::quat::{self, Quat};

/// Gradients of a scalar loss with respect to the raw parameters of every
/// Gaussian, plus the view-space positional gradient statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub d_mean: Vec<Vector3<f64>>,
    pub d_rotation: Vec<Quat>,
    pub d_log_scale: Vec<Vector3<f64>>,
    pub d_opacity_logit: Vec<f64>,
    pub d_sh: Vec<Sh>,
    /// Sum over rendered views of `|dL/dμ₂d|` (pixels).
    pub viewspace_grad_norm_accum: Vec<f64>,
    /// Number of rendered views in which the Gaussian contributed.
    pub viewspace_grad_count: Vec<u32>,
}

impl GradientBuffer {
    pub fn zeros(n: usize) -> Self {
        GradientBuffer {
            d_mean: vec![Vector3::zeros(); n],
            d_rotation: vec![[0.0; 4]; n],
            d_log_scale: vec![Vector3::zeros(); n],
            d_opacity_logit: vec![0.0; n],
            d_sh: vec![[Vector3::zeros(); 4]; n],
            viewspace_grad_norm_accum: vec![0.0; n],
            viewspace_grad_count: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_mean.is_empty()
    }

    /// Adds the view-space statistics of `other` (same length) into `self`.
    pub fn accumulate_viewspace(&mut self, other: &GradientBuffer) {
        assert_eq!(self.len(), other.len());
        for i in 0..self.len() {
            self.viewspace_grad_norm_accum[i] += other.viewspace_grad_norm_accum[i];
            self.viewspace_grad_count[i] += other.viewspace_grad_count[i];
        }
    }

    /// Average view-space gradient magnitude of Gaussian `i`.
    pub fn average_viewspace(&self, i: usize) -> f64 {
        self.viewspace_grad_norm_accum[i] / self.viewspace_grad_count[i].max(1) as f64
    }

    pub fn reset_viewspace(&mut self) {
        self.viewspace_grad_norm_accum.iter_mut().for_each(|v| *v = 0.0);
        self.viewspace_grad_count.iter_mut().for_each(|v| *v = 0);
    }
}

/// Per-Gaussian gradients with respect to screen-space quantities.
#[derive(Debug, Clone, Copy)]
struct ScreenGrad {
    mean2d: Vector2<f64>,
    /// With respect to the conic entries `(a, b, c)` of `[[a, b], [b, c]]`.
    conic: Vector3<f64>,
    color: Vector3<f64>,
    opacity: f64,
}

impl ScreenGrad {
    fn zero() -> Self {
        ScreenGrad {
            mean2d: Vector2::zeros(),
            conic: Vector3::zeros(),
            color: Vector3::zeros(),
            opacity: 0.0,
        }
    }

    fn add(&mut self, o: &ScreenGrad) {
        self.mean2d += o.mean2d;
        self.conic += o.conic;
        self.color += o.color;
        self.opacity += o.opacity;
    }
}

/// Backpropagates `d_image = dL/d(image)` through the render that produced
/// `ctx`.
pub fn rasterize_backward(ctx: &RenderContext, d_image: &Image) -> Result<GradientBuffer> {
    let (width, height) = (ctx.width(), ctx.height());
    if d_image.width != width || d_image.height != height {
        return Err(Error::ShapeMismatch {
            expected: format!("{width}x{height} gradient image"),
            found: format!("{}x{}", d_image.width, d_image.height),
        });
    }
    let n = ctx.gaussian_count();
    let cfg = &ctx.cfg;
    let power_cutoff = -0.5 * cfg.sigma_extent * cfg.sigma_extent;

    // per tile: partial screen-space gradients, reduced below in tile order
    let partials: Vec<Vec<(usize, ScreenGrad)>> = ctx
        .tiles
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let (x0, y0, x1, y1) = ctx.grid.tile_pixels(t);
            let mut local = vec![ScreenGrad::zero(); list.len()];
            let mut contributed = vec![false; list.len()];
            for py in y0..y1 {
                for px in x0..x1 {
                    let pix = py * width + px;
                    let dc = Vector3::new(
                        d_image.data[pix * 3],
                        d_image.data[pix * 3 + 1],
                        d_image.data[pix * 3 + 2],
                    );
                    let center = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
                    let mut transmittance = ctx.final_t[pix];
                    let mut behind = ctx.background;
                    let stop = ctx.stop[pix] as usize;
                    for k in (0..stop).rev() {
                        let p = ctx.projected[list[k]].as_ref().unwrap();
                        let Some((alpha, g, clamped)) = blend_alpha(p, center, cfg, power_cutoff) else {
                            continue;
                        };
                        contributed[k] = true;
                        let t_k = transmittance / (1.0 - alpha);
                        let s = &mut local[k];
                        s.color += dc * (alpha * t_k);
                        let d_alpha = t_k * dc.dot(&(p.color_view - behind));
                        behind = p.color_view * alpha + behind * (1.0 - alpha);
                        transmittance = t_k;
                        if clamped {
                            continue;
                        }
                        s.opacity += g * d_alpha;
                        let d_power = p.opacity * g * d_alpha;
                        let d = center - p.mean2d;
                        let kk = &p.conic;
                        s.mean2d +=
                            Vector2::new(kk[(0, 0)] * d.x + kk[(0, 1)] * d.y, kk[(0, 1)] * d.x + kk[(1, 1)] * d.y)
                                * d_power;
                        s.conic += Vector3::new(-0.5 * d.x * d.x, -d.x * d.y, -0.5 * d.y * d.y) * d_power;
                    }
                }
            }
            list.iter()
                .zip(local)
                .zip(contributed)
                .filter(|(_, c)| *c)
                .map(|((&gi, s), _)| (gi, s))
                .collect()
        })
        .collect();

    let mut screen = vec![ScreenGrad::zero(); n];
    let mut contributed = vec![false; n];
    for tile in &partials {
        for (gi, s) in tile {
            screen[*gi].add(s);
            contributed[*gi] = true;
        }
    }

    let per_gaussian: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !contributed[i] {
                return None;
            }
            Some(gaussian_backward(ctx, i, &screen[i]))
        })
        .collect();

    let mut out = GradientBuffer::zeros(n);
    for (i, g) in per_gaussian.into_iter().enumerate() {
        let Some(g) = g else { continue };
        out.d_mean[i] = g.mean;
        out.d_rotation[i] = g.rotation;
        out.d_log_scale[i] = g.log_scale;
        out.d_opacity_logit[i] = g.opacity_logit;
        out.d_sh[i] = g.sh;
        // normalized device units, so the threshold does not depend on
        // image resolution
        let g2 = screen[i].mean2d;
        out.viewspace_grad_norm_accum[i] = (g2.x * 0.5 * width as f64).hypot(g2.y * 0.5 * height as f64);
        out.viewspace_grad_count[i] = 1;
    }
    Ok(out)
}

struct RawGrad {
    mean: Vector3<f64>,
    rotation: Quat,
    log_scale: Vector3<f64>,
    opacity_logit: f64,
    sh: Sh,
}

fn gaussian_backward(ctx: &RenderContext, i: usize, s: &ScreenGrad) -> RawGrad {
    let p = ctx.projected[i].as_ref().unwrap();
    let c = ctx.caches[i].as_ref().unwrap();
    let cam = &ctx.camera;
    let sh = &ctx.cloud.sh[i];

    // color: clamp mask, then SH coefficients and view direction
    let d_color = Vector3::from_fn(|k, _| {
        if c.color_unclamped[k] > 0.0 && c.color_unclamped[k] < 1.0 {
            s.color[k]
        } else {
            0.0
        }
    });
    let basis = sh_basis(&c.view_dir);
    let d_sh: Sh = [d_color * SH_C0, d_color * basis.x, d_color * basis.y, d_color * basis.z];
    let d_dir = Vector3::new(
        -SH_C1 * sh[3].dot(&d_color),
        -SH_C1 * sh[1].dot(&d_color),
        SH_C1 * sh[2].dot(&d_color),
    );
    let mut d_mean = (d_dir - c.view_dir * c.view_dir.dot(&d_dir)) / c.view_dist;

    let d_opacity_logit = s.opacity * p.opacity * (1.0 - p.opacity);

    // conic = cov2d⁻¹  =>  dL/dcov2d = -K G K, G the symmetric conic gradient
    let k = &p.conic;
    let g_conic = Matrix2::new(s.conic.x, 0.5 * s.conic.y, 0.5 * s.conic.y, s.conic.z);
    let g_cov2d = -(k * g_conic * k);
    let j = &c.jacobian;
    let g_cov_cam = j.transpose() * g_cov2d * j;
    let g_jac = 2.0 * g_cov2d * j * c.cov_cam;
    let g_cov = cam.rotation.transpose() * g_cov_cam * cam.rotation;

    // cov = M Mᵀ with M = R diag(s)
    let m = c.rotation * Matrix3::from_diagonal(&c.scale);
    let g_m = 2.0 * g_cov * m;
    let mut g_rot = Matrix3::zeros();
    let mut d_log_scale = Vector3::zeros();
    for col in 0..3 {
        let gcol = g_m.column(col);
        g_rot.set_column(col, &(gcol * c.scale[col]));
        d_log_scale[col] = c.rotation.column(col).dot(&gcol) * c.scale[col];
    }
    let d_unit = quat::to_matrix_vjp(&c.unit_rotation, &g_rot);
    let d_rotation = quat::normalize_vjp(&ctx.cloud.rotations[i], &d_unit);

    // camera-space position: through μ₂d and through J
    let xc = &c.x_cam;
    let (fx, fy) = (cam.fx, cam.fy);
    let iz = 1.0 / xc.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut d_xc = j.transpose() * s.mean2d;
    d_xc.x += g_jac[(0, 2)] * (-fx * iz2);
    d_xc.y += g_jac[(1, 2)] * (-fy * iz2);
    d_xc.z += g_jac[(0, 0)] * (-fx * iz2)
        + g_jac[(0, 2)] * (2.0 * fx * xc.x * iz3)
        + g_jac[(1, 1)] * (-fy * iz2)
        + g_jac[(1, 2)] * (2.0 * fy * xc.y * iz3);
    d_mean += cam.rotation.transpose() * d_xc;

    RawGrad {
        mean: d_mean,
        rotation: d_rotation,
        log_scale: d_log_scale,
        opacity_logit: d_opacity_logit,
        sh: d_sh,
    }
}
