//! Adam with per-slot moment buffers.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::gaussian::{GaussianCloud, Sh};
use crate::raster::GradientBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        // eps this small matters: hash features start around 1e-4
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// First and second moment buffers for one parameter array.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        AdamMoments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    #[inline]
    fn update_one(&mut self, i: usize, p: &mut f64, g: f64, lr: f64, step: u64, cfg: &AdamConfig) {
        self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
        self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = self.m[i] / (1.0 - cfg.beta1.powi(step as i32));
        let v_hat = self.v[i] / (1.0 - cfg.beta2.powi(step as i32));
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }

    /// Dense update of every slot. `step` is the 1-based step count.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, step: u64, cfg: &AdamConfig) {
        assert_eq!(params.len(), self.len());
        assert_eq!(grads.len(), self.len());
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            self.update_one(i, p, g, lr, step, cfg);
        }
    }

    /// Lazy update: only the listed rows (of `row_len` slots each) have
    /// their moments and values touched.
    pub fn step_rows(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        row_len: usize,
        rows: &[usize],
        lr: f64,
        step: u64,
        cfg: &AdamConfig,
    ) {
        assert_eq!(params.len(), self.len());
        for &r in rows {
            for i in r * row_len..(r + 1) * row_len {
                self.update_one(i, &mut params[i], grads[i], lr, step, cfg);
            }
        }
    }

    pub fn retain_rows(&mut self, row_len: usize, keep: &[bool]) {
        let mut m = Vec::with_capacity(self.m.len());
        let mut v = Vec::with_capacity(self.v.len());
        for (r, &k) in keep.iter().enumerate() {
            if k {
                m.extend_from_slice(&self.m[r * row_len..(r + 1) * row_len]);
                v.extend_from_slice(&self.v[r * row_len..(r + 1) * row_len]);
            }
        }
        self.m = m;
        self.v = v;
    }

    pub fn push_zero_rows(&mut self, row_len: usize, rows: usize) {
        self.m.resize(self.m.len() + row_len * rows, 0.0);
        self.v.resize(self.v.len() + row_len * rows, 0.0);
    }
}

/// Per-parameter-group learning rates for Gaussian training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianLrs {
    pub mean: f64,
    /// Applied to the DC coefficient; the degree-1 terms use `sh / 20`.
    pub sh: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
}

const SH_REST_DIVISOR: f64 = 20.0;

/// Adam state for every parameter group of a [`GaussianCloud`], resizable
/// as Gaussians are added and removed.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianAdam {
    pub means: AdamMoments,
    pub rotations: AdamMoments,
    pub log_scales: AdamMoments,
    pub opacity: AdamMoments,
    pub sh_dc: AdamMoments,
    pub sh_rest: AdamMoments,
    pub step: u64,
}

fn step_group<const K: usize>(
    moments: &mut AdamMoments,
    rows: &mut [[f64; K]],
    grads: &[[f64; K]],
    lr: f64,
    step: u64,
    cfg: &AdamConfig,
) {
    for (r, (p, g)) in rows.iter_mut().zip(grads).enumerate() {
        for k in 0..K {
            moments.update_one(r * K + k, &mut p[k], g[k], lr, step, cfg);
        }
    }
}

fn as_rows3(v: &[Vector3<f64>]) -> Vec<[f64; 3]> {
    v.iter().map(|x| [x.x, x.y, x.z]).collect()
}

fn write_rows3(v: &mut [Vector3<f64>], rows: &[[f64; 3]]) {
    for (x, r) in v.iter_mut().zip(rows) {
        *x = Vector3::from(*r);
    }
}

impl GaussianAdam {
    pub fn zeros(n: usize) -> Self {
        GaussianAdam {
            means: AdamMoments::zeros(3 * n),
            rotations: AdamMoments::zeros(4 * n),
            log_scales: AdamMoments::zeros(3 * n),
            opacity: AdamMoments::zeros(n),
            sh_dc: AdamMoments::zeros(3 * n),
            sh_rest: AdamMoments::zeros(9 * n),
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.opacity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity.is_empty()
    }

    pub fn retain(&mut self, keep: &[bool]) {
        self.means.retain_rows(3, keep);
        self.rotations.retain_rows(4, keep);
        self.log_scales.retain_rows(3, keep);
        self.opacity.retain_rows(1, keep);
        self.sh_dc.retain_rows(3, keep);
        self.sh_rest.retain_rows(9, keep);
    }

    pub fn push_zeros(&mut self, n: usize) {
        self.means.push_zero_rows(3, n);
        self.rotations.push_zero_rows(4, n);
        self.log_scales.push_zero_rows(3, n);
        self.opacity.push_zero_rows(1, n);
        self.sh_dc.push_zero_rows(3, n);
        self.sh_rest.push_zero_rows(9, n);
    }

    /// One Adam step on every parameter of `cloud`, whose gradients are the
    /// first `cloud.len()` rows of `grads` offset by `offset`.
    pub fn step(
        &mut self,
        cloud: &mut GaussianCloud,
        grads: &GradientBuffer,
        offset: usize,
        lrs: &GaussianLrs,
        cfg: &AdamConfig,
    ) {
        let n = cloud.len();
        assert_eq!(self.len(), n);
        assert!(grads.len() >= offset + n);
        self.step += 1;
        let t = self.step;
        let r = offset..offset + n;

        let mut rows = as_rows3(&cloud.means);
        let g: Vec<[f64; 3]> = grads.d_mean[r.clone()].iter().map(|x| [x.x, x.y, x.z]).collect();
        step_group(&mut self.means, &mut rows, &g, lrs.mean, t, cfg);
        write_rows3(&mut cloud.means, &rows);

        step_group(
            &mut self.rotations,
            &mut cloud.rotations,
            &grads.d_rotation[r.clone()],
            lrs.rotation,
            t,
            cfg,
        );

        let mut rows = as_rows3(&cloud.log_scales);
        let g: Vec<[f64; 3]> = grads.d_log_scale[r.clone()].iter().map(|x| [x.x, x.y, x.z]).collect();
        step_group(&mut self.log_scales, &mut rows, &g, lrs.scale, t, cfg);
        write_rows3(&mut cloud.log_scales, &rows);

        let mut rows: Vec<[f64; 1]> = cloud.opacity_logits.iter().map(|&o| [o]).collect();
        let g: Vec<[f64; 1]> = grads.d_opacity_logit[r.clone()].iter().map(|&o| [o]).collect();
        step_group(&mut self.opacity, &mut rows, &g, lrs.opacity, t, cfg);
        for (o, v) in cloud.opacity_logits.iter_mut().zip(rows) {
            *o = v[0];
        }

        let mut dc: Vec<[f64; 3]> = cloud.sh.iter().map(|s| [s[0].x, s[0].y, s[0].z]).collect();
        let g: Vec<[f64; 3]> = grads.d_sh[r.clone()].iter().map(|s| [s[0].x, s[0].y, s[0].z]).collect();
        step_group(&mut self.sh_dc, &mut dc, &g, lrs.sh, t, cfg);
        let flat9 = |s: &Sh| -> [f64; 9] { std::array::from_fn(|k| s[1 + k / 3][k % 3]) };
        let mut rest: Vec<[f64; 9]> = cloud.sh.iter().map(flat9).collect();
        let g: Vec<[f64; 9]> = grads.d_sh[r].iter().map(flat9).collect();
        step_group(&mut self.sh_rest, &mut rest, &g, lrs.sh / SH_REST_DIVISOR, t, cfg);
        for (s, (d, e)) in cloud.sh.iter_mut().zip(dc.iter().zip(&rest)) {
            s[0] = Vector3::from(*d);
            for k in 0..9 {
                s[1 + k / 3][k % 3] = e[k];
            }
        }
    }
}
