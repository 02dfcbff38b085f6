//! Applying per-Gaussian translations and rotations to a cloud, including
//! the matching rotation of the degree-1 SH coefficients.
//!
//! Composition order: `q' = norm(dq) ⊗ q`, i.e. `R(q') = R(dq) R(q)`. The
//! increment acts in world frame after the Gaussian's own orientation, so
//! the world-frame SH coefficients rotate by `R(dq)` alone. `q` is not
//! renormalized here: every consumer derives rotations from the normalized
//! quaternion, and leaving it alone keeps the identity transform bit-exact.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{sh_basis, GaussianCloud, Sh};
use crate::ntc::{NeuralTransformationCache, NtcOutput};
use crate::quat::{self, Quat};

const ROTATION_TOLERANCE: f64 = 1e-6;

/// Linear map on the three degree-1 SH coefficients of one color channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShRotation {
    pub m: Matrix3<f64>,
}

/// `[P(N₀) P(N₁) P(N₂)]` for the unit axes, with the basis normalization
/// constant divided out. It is a signed permutation, so its inverse is its
/// transpose exactly; the constant cancels in `M` anyway.
fn axis_projection() -> Matrix3<f64> {
    Matrix3::new(
        0.0, -1.0, 0.0, //
        0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0,
    )
}

fn unit_projection(n: &Vector3<f64>) -> Vector3<f64> {
    axis_projection() * n
}

pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if !(dev <= ROTATION_TOLERANCE) || !((det - 1.0).abs() <= ROTATION_TOLERANCE) {
        return Err(Error::NotARotation {
            deviation: dev.max((det - 1.0).abs()),
        });
    }
    Ok(())
}

/// `M = [P(R N₀), P(R N₁), P(R N₂)] A⁻¹` with `A = [P(N₀), P(N₁), P(N₂)]`.
pub fn sh_rotation_matrix(r: &Matrix3<f64>) -> Result<ShRotation> {
    check_rotation(r)?;
    Ok(sh_rotation_unchecked(r))
}

fn sh_rotation_unchecked(r: &Matrix3<f64>) -> ShRotation {
    let a = axis_projection();
    let cols = Matrix3::from_columns(&[
        unit_projection(&(r * Vector3::x())),
        unit_projection(&(r * Vector3::y())),
        unit_projection(&(r * Vector3::z())),
    ]);
    ShRotation {
        m: cols * a.transpose(),
    }
}

/// Projection of a unit direction onto the degree-1 basis, matching the
/// renderer's color evaluation.
pub fn sh_projection(n: &Vector3<f64>) -> Vector3<f64> {
    sh_basis(n)
}

impl ShRotation {
    pub fn apply(&self, sh: &Sh) -> Sh {
        let m = &self.m;
        let mut out = *sh;
        for i in 0..3 {
            out[1 + i] = sh[1] * m[(i, 0)] + sh[2] * m[(i, 1)] + sh[3] * m[(i, 2)];
        }
        out
    }

    /// `dL/dM` from the output gradient of [`ShRotation::apply`].
    fn grad_m(sh: &Sh, d_out: &Sh) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| d_out[1 + i].dot(&sh[1 + j]))
    }
}

/// Backpropagates `dL/dM` to `dL/dR`.
fn sh_rotation_vjp(g_m: &Matrix3<f64>) -> Matrix3<f64> {
    let a = axis_projection();
    a.transpose() * g_m * a
}

/// Per-Gaussian translation and rotation increments.
pub trait Deformation {
    fn deltas(&self, means: &[Vector3<f64>]) -> Result<NtcOutput>;

    /// Whether a mean can be fed to [`Deformation::deltas`]; others pass
    /// through unchanged.
    fn covers(&self, _mean: &Vector3<f64>) -> bool {
        true
    }
}

impl Deformation for NeuralTransformationCache {
    fn deltas(&self, means: &[Vector3<f64>]) -> Result<NtcOutput> {
        self.evaluate(means)
    }

    fn covers(&self, mean: &Vector3<f64>) -> bool {
        self.grid().contains(mean)
    }
}

/// Global rigid motion `x ↦ R x + t`, expressed as per-point increments.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidMotion {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Deformation for RigidMotion {
    fn deltas(&self, means: &[Vector3<f64>]) -> Result<NtcOutput> {
        check_rotation(&self.rotation)?;
        let q = quat::from_matrix(&self.rotation);
        Ok(NtcOutput {
            d_mu: means.iter().map(|m| self.rotation * m - m + self.translation).collect(),
            d_q: vec![q; means.len()],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformOptions {
    pub rotate_sh: bool,
}

impl Default for TransformOptions {
    fn default() -> Self {
        TransformOptions { rotate_sh: true }
    }
}

/// Indices of the Gaussians a deformation moves.
pub fn covered_indices(cloud: &GaussianCloud, deformation: &dyn Deformation) -> Vec<usize> {
    (0..cloud.len())
        .filter(|&i| deformation.covers(&cloud.means[i]))
        .collect()
}

/// Applies precomputed increments to the Gaussians listed in `indices`.
pub fn apply_deltas(
    cloud: &GaussianCloud,
    indices: &[usize],
    deltas: &NtcOutput,
    opts: &TransformOptions,
) -> Result<GaussianCloud> {
    if deltas.d_mu.len() != indices.len() || deltas.d_q.len() != indices.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} increments", indices.len()),
            found: format!("{} / {}", deltas.d_mu.len(), deltas.d_q.len()),
        });
    }
    let updates = indices
        .par_iter()
        .enumerate()
        .map(|(k, &i)| {
            let dq = quat::normalize(&deltas.d_q[k])?;
            let q = quat::mul(&dq, &cloud.rotations[i]);
            let sh = if opts.rotate_sh {
                sh_rotation_unchecked(&quat::to_matrix(&dq)).apply(&cloud.sh[i])
            } else {
                cloud.sh[i]
            };
            Ok((cloud.means[i] + deltas.d_mu[k], q, sh))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = cloud.clone();
    for (&i, (m, q, sh)) in indices.iter().zip(updates) {
        out.means[i] = m;
        out.rotations[i] = q;
        out.sh[i] = sh;
    }
    Ok(out)
}

/// Moves and rotates every covered Gaussian; the rest pass through.
pub fn apply_deformation(
    cloud: &GaussianCloud,
    deformation: &dyn Deformation,
    opts: &TransformOptions,
) -> Result<GaussianCloud> {
    let idx = covered_indices(cloud, deformation);
    let means: Vec<Vector3<f64>> = idx.iter().map(|&i| cloud.means[i]).collect();
    let deltas = deformation.deltas(&means)?;
    apply_deltas(cloud, &idx, &deltas, opts)
}

pub fn apply_ntc(
    cloud: &GaussianCloud,
    cache: &NeuralTransformationCache,
    opts: &TransformOptions,
) -> Result<GaussianCloud> {
    apply_deformation(cloud, cache, opts)
}

/// Gradients of the loss with respect to the transformed cloud's means,
/// raw rotations and SH.
pub struct TransformedGrads<'a> {
    pub d_mean: &'a [Vector3<f64>],
    pub d_rotation: &'a [Quat],
    pub d_sh: &'a [Sh],
}

/// Backpropagates through [`apply_deltas`] to the increments of the
/// Gaussians in `indices`.
pub fn apply_deltas_backward(
    cloud: &GaussianCloud,
    indices: &[usize],
    deltas: &NtcOutput,
    grads: &TransformedGrads<'_>,
    opts: &TransformOptions,
) -> Result<(Vec<Vector3<f64>>, Vec<Quat>)> {
    let res = indices
        .par_iter()
        .enumerate()
        .map(|(k, &i)| {
            let raw = &deltas.d_q[k];
            let dq = quat::normalize(raw)?;
            // q' = dq ⊗ q = Q(q) dq
            let qm = quat::right_mul_matrix(&cloud.rotations[i]);
            let gq = grads.d_rotation[i];
            let g = qm.transpose() * nalgebra::Vector4::new(gq[0], gq[1], gq[2], gq[3]);
            let mut d_unit = [g[0], g[1], g[2], g[3]];
            if opts.rotate_sh {
                let g_m = ShRotation::grad_m(&cloud.sh[i], &grads.d_sh[i]);
                let g_r = sh_rotation_vjp(&g_m);
                let extra = quat::to_matrix_vjp(&dq, &g_r);
                for c in 0..4 {
                    d_unit[c] += extra[c];
                }
            }
            Ok((grads.d_mean[i], quat::normalize_vjp(raw, &d_unit)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(res.into_iter().unzip())
}
