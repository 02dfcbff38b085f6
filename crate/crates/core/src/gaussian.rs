//! The Gaussian scene representation and its parameter activations.
//!
//! Parameters are stored unconstrained: scales in log-space, opacity as a
//! logit, rotation as an unnormalized `(w, x, y, z)` quaternion. Colors are
//! degree-1 real spherical harmonics, four RGB coefficients per Gaussian:
//! index 0 is the constant (DC) term and indices 1..=3 multiply the
//! degree-1 basis functions in `(y, z, x)` order (see [`sh_basis`]).

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::quat::{self, Quat};

/// Normalization of the constant SH basis function, `1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
/// Normalization of the degree-1 SH basis functions, `sqrt(3 / (4 pi))`.
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_COEFFS: usize = 4;

pub type Sh = [Vector3<f64>; SH_COEFFS];

/// Degree-1 real SH basis evaluated at a unit direction, in storage order
/// `(y, z, x)` with the sign convention `(-c y, c z, -c x)`.
pub fn sh_basis(dir: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-SH_C1 * dir.y, SH_C1 * dir.z, -SH_C1 * dir.x)
}

/// Unclamped view-dependent color: the SH expansion plus the 0.5 offset.
pub fn sh_color(sh: &Sh, dir: &Vector3<f64>) -> Vector3<f64> {
    let b = sh_basis(dir);
    sh[0] * SH_C0 + sh[1] * b.x + sh[2] * b.y + sh[3] * b.z + Vector3::repeat(0.5)
}

/// DC coefficient that reproduces a flat RGB color.
pub fn rgb_to_sh_dc(rgb: &Vector3<f64>) -> Vector3<f64> {
    (rgb - Vector3::repeat(0.5)) / SH_C0
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// A single Gaussian in raw (optimizer) parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vector3<f64>,
    pub rotation: Quat,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub sh: Sh,
}

/// A Gaussian with its constraints applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivatedGaussian {
    pub mean: Vector3<f64>,
    pub rotation: Quat,
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub sh: Sh,
}

impl Gaussian {
    pub fn activate(&self) -> Result<ActivatedGaussian> {
        Ok(ActivatedGaussian {
            mean: self.mean,
            rotation: quat::normalize(&self.rotation)?,
            scale: self.log_scale.map(f64::exp),
            opacity: sigmoid(self.opacity_logit),
            sh: self.sh,
        })
    }

    pub fn covariance(&self) -> Result<Matrix3<f64>> {
        let a = self.activate()?;
        Ok(covariance_from_rotation_scale(&a.rotation, &a.scale))
    }
}

/// `R diag(s)^2 R^T` for a unit quaternion and positive scales.
pub fn covariance_from_rotation_scale(rotation: &Quat, scale: &Vector3<f64>) -> Matrix3<f64> {
    let r = quat::to_matrix(rotation);
    let m = r * Matrix3::from_diagonal(scale);
    let cov = m * m.transpose();
    // exact symmetry
    (cov + cov.transpose()) * 0.5
}

/// Unnormalized Gaussian density `exp(-0.5 d^T Σ^-1 d)`.
pub fn evaluate_gaussian(x: &Vector3<f64>, mean: &Vector3<f64>, cov: &Matrix3<f64>) -> Result<f64> {
    let det = cov.determinant();
    let scale = cov.abs().max().max(f64::MIN_POSITIVE);
    if !det.is_finite() || det.abs() <= 1e-14 * scale.powi(3) {
        return Err(Error::DegenerateCovariance { det });
    }
    let chol = cov.cholesky().ok_or(Error::DegenerateCovariance { det })?;
    let d = x - mean;
    let y = chol.solve(&d);
    Ok((-0.5 * d.dot(&y)).exp())
}

/// The scene: parallel arrays of per-Gaussian raw parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianCloud {
    pub means: Vec<Vector3<f64>>,
    pub rotations: Vec<Quat>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<Sh>,
}

impl GaussianCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            means: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            opacity_logits: Vec::with_capacity(n),
            sh: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn push(&mut self, g: Gaussian) {
        self.means.push(g.mean);
        self.rotations.push(g.rotation);
        self.log_scales.push(g.log_scale);
        self.opacity_logits.push(g.opacity_logit);
        self.sh.push(g.sh);
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            mean: self.means[i],
            rotation: self.rotations[i],
            log_scale: self.log_scales[i],
            opacity_logit: self.opacity_logits[i],
            sh: self.sh[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Gaussian> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    pub fn extend(&mut self, other: &GaussianCloud) {
        self.means.extend_from_slice(&other.means);
        self.rotations.extend_from_slice(&other.rotations);
        self.log_scales.extend_from_slice(&other.log_scales);
        self.opacity_logits.extend_from_slice(&other.opacity_logits);
        self.sh.extend_from_slice(&other.sh);
    }

    /// Concatenation `self ∪ other`, with `self`'s Gaussians first.
    pub fn union(&self, other: &GaussianCloud) -> GaussianCloud {
        let mut out = self.clone();
        out.extend(other);
        out
    }

    /// Keeps the Gaussians for which `keep[i]` is true.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        fn filter<T: Copy>(v: &mut Vec<T>, keep: &[bool]) {
            let mut i = 0;
            v.retain(|_| {
                i += 1;
                keep[i - 1]
            });
        }
        filter(&mut self.means, keep);
        filter(&mut self.rotations, keep);
        filter(&mut self.log_scales, keep);
        filter(&mut self.opacity_logits, keep);
        filter(&mut self.sh, keep);
    }

    pub fn select(&self, indices: &[usize]) -> GaussianCloud {
        let mut out = GaussianCloud::with_capacity(indices.len());
        for &i in indices {
            out.push(self.get(i));
        }
        out
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn scale(&self, i: usize) -> Vector3<f64> {
        self.log_scales[i].map(f64::exp)
    }

    pub fn covariance(&self, i: usize) -> Result<Matrix3<f64>> {
        let q = quat::normalize(&self.rotations[i])?;
        Ok(covariance_from_rotation_scale(&q, &self.scale(i)))
    }

    /// Rounds every parameter to the nearest `f32`, the precision of all
    /// serialized formats.
    pub fn quantize_f32(&mut self) {
        let q = |x: f64| x as f32 as f64;
        for m in &mut self.means {
            *m = m.map(q);
        }
        for r in &mut self.rotations {
            *r = r.map(q);
        }
        for s in &mut self.log_scales {
            *s = s.map(q);
        }
        for o in &mut self.opacity_logits {
            *o = q(*o);
        }
        for sh in &mut self.sh {
            for c in sh.iter_mut() {
                *c = c.map(q);
            }
        }
    }

    /// Name of the first parameter array holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        if self.means.iter().any(|m| !m.iter().all(|x| x.is_finite())) {
            return Some("means");
        }
        if self.rotations.iter().any(|r| !r.iter().all(|x| x.is_finite())) {
            return Some("rotations");
        }
        if self.log_scales.iter().any(|s| !s.iter().all(|x| x.is_finite())) {
            return Some("log_scales");
        }
        if self.opacity_logits.iter().any(|o| !o.is_finite()) {
            return Some("opacity_logits");
        }
        if self
            .sh
            .iter()
            .any(|sh| !sh.iter().all(|c| c.iter().all(|x| x.is_finite())))
        {
            return Some("sh");
        }
        None
    }
}

impl FromIterator<Gaussian> for GaussianCloud {
    fn from_iter<I: IntoIterator<Item = Gaussian>>(iter: I) -> Self {
        let mut cloud = GaussianCloud::new();
        for g in iter {
            cloud.push(g);
        }
        cloud
    }
}
