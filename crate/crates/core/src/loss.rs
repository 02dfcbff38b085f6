//! Image reconstruction loss `(1 - λ) L1 + λ D-SSIM` and the warm-up loss
//! that pulls the transformation cache toward the identity.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::quat::Quat;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_dssim: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_dssim: 0.2,
            ssim_window: 11,
            ssim_sigma: 1.5,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_dssim) {
            return Err(Error::Config(format!(
                "lambda_dssim must lie in [0, 1], got {}",
                self.lambda_dssim
            )));
        }
        if self.ssim_window % 2 == 0 || self.ssim_window == 0 {
            return Err(Error::Config("ssim_window must be odd".into()));
        }
        Ok(())
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - half;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "same" convolution of one plane with zero padding. The kernel
/// is symmetric, so this is also its own adjoint.
fn blur(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let xx = x as isize + k as isize - r as isize;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let yy = y as isize + k as isize - r as isize;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM over all pixels and channels, and optionally its gradient with
/// respect to `x`.
pub fn ssim(x: &Image, y: &Image, cfg: &LossConfig, with_grad: bool) -> Result<(f64, Option<Image>)> {
    x.same_shape(y)?;
    let (w, h) = (x.width, x.height);
    let kernel = gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma);
    let n = (w * h * 3) as f64;
    let mut total = 0.0;
    let mut grad = with_grad.then(|| Image::new(w, h));
    for c in 0..3 {
        let xs = channel(x, c);
        let ys = channel(y, c);
        let mu_x = blur(&xs, w, h, &kernel);
        let mu_y = blur(&ys, w, h, &kernel);
        let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();
        let e_xx = blur(&xx, w, h, &kernel);
        let e_yy = blur(&yy, w, h, &kernel);
        let e_xy = blur(&xy, w, h, &kernel);

        let mut g_mu = vec![0.0; w * h];
        let mut g_xx = vec![0.0; w * h];
        let mut g_xy = vec![0.0; w * h];
        for i in 0..w * h {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = e_xx[i] - mx * mx;
            let var_y = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            let a1 = 2.0 * mx * my + cfg.ssim_c1;
            let a2 = 2.0 * cov + cfg.ssim_c2;
            let b1 = mx * mx + my * my + cfg.ssim_c1;
            let b2 = var_x + var_y + cfg.ssim_c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if with_grad {
                let ds_dmx = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
                let ds_dvar = -s / b2;
                let ds_dcov = 2.0 * a1 / (b1 * b2);
                g_mu[i] = (ds_dmx - 2.0 * mx * ds_dvar - my * ds_dcov) / n;
                g_xx[i] = ds_dvar / n;
                g_xy[i] = ds_dcov / n;
            }
        }
        if let Some(grad) = grad.as_mut() {
            let b_mu = blur(&g_mu, w, h, &kernel);
            let b_xx = blur(&g_xx, w, h, &kernel);
            let b_xy = blur(&g_xy, w, h, &kernel);
            for i in 0..w * h {
                grad.data[i * 3 + c] = b_mu[i] + 2.0 * xs[i] * b_xx[i] + ys[i] * b_xy[i];
            }
        }
    }
    Ok((total / n, grad))
}

/// `(1 - λ) L1 + λ (1 - SSIM) / 2` and its gradient with respect to
/// `rendered`. The L1 subgradient at zero residual is zero.
pub fn render_loss(rendered: &Image, target: &Image, cfg: &LossConfig) -> Result<(f64, Image)> {
    rendered.same_shape(target)?;
    let lambda = cfg.lambda_dssim;
    let n = rendered.data.len() as f64;
    let mut grad = Image::new(rendered.width, rendered.height);
    let mut l1 = 0.0;
    for ((g, r), t) in grad.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let d = r - t;
        l1 += d.abs();
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        *g = (1.0 - lambda) * sign / n;
    }
    l1 /= n;
    let mut loss = (1.0 - lambda) * l1;
    if lambda > 0.0 {
        let (s, sg) = ssim(rendered, target, cfg, true)?;
        loss += lambda * (1.0 - s) / 2.0;
        for (g, d) in grad.data.iter_mut().zip(&sg.unwrap().data) {
            *g -= 0.5 * lambda * d;
        }
    }
    Ok((loss, grad))
}

/// Warm-up loss `mean_i ( |dμ_i|_1 - cos²(dq_i / |dq_i|, identity) )` and its
/// gradients with respect to every `dμ_i` and `dq_i`.
pub fn warmup_loss(d_mu: &[Vector3<f64>], d_q: &[Quat]) -> Result<(f64, Vec<Vector3<f64>>, Vec<Quat>)> {
    assert_eq!(d_mu.len(), d_q.len());
    if d_mu.is_empty() {
        return Err(Error::Config("warm-up batch is empty".into()));
    }
    let n = d_mu.len() as f64;
    let mut loss = 0.0;
    let mut g_mu = Vec::with_capacity(d_mu.len());
    let mut g_q = Vec::with_capacity(d_q.len());
    for (m, q) in d_mu.iter().zip(d_q) {
        let nsq = q.iter().map(|v| v * v).sum::<f64>();
        if nsq == 0.0 || !nsq.is_finite() {
            return Err(Error::ZeroQuaternion);
        }
        let w = q[0];
        let cos2 = w * w / nsq;
        loss += m.abs().sum() - cos2;
        g_mu.push(m.map(|v| {
            if v > 0.0 {
                1.0 / n
            } else if v < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        }));
        // d(-w²/|q|²)
        let dw = -2.0 * w * (nsq - w * w) / (nsq * nsq);
        let k = 2.0 * w * w / (nsq * nsq);
        g_q.push([dw / n, k * q[1] / n, k * q[2] / n, k * q[3] / n]);
    }
    Ok((loss / n, g_mu, g_q))
}
