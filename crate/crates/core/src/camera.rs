//! Pinhole camera, perspective projection, and the local affine
//! approximation used to splat 3D covariances onto the image plane.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance added to both diagonal entries of every projected covariance
/// (pixels squared), so that sub-pixel Gaussians still cover a pixel.
pub const LOW_PASS_VARIANCE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Rotation part of the world-to-camera transform.
    pub rotation: Matrix3<f64>,
    /// Translation part of the world-to-camera transform.
    pub translation: Vector3<f64>,
    pub near_clip: f64,
}

impl Camera {
    pub fn new(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let cam = Camera {
            width,
            height,
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            translation,
            near_clip: 0.01,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`; camera axes are x right,
    /// y down, z forward.
    pub fn look_at(
        width: usize,
        height: usize,
        focal: f64,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Camera::new(width, height, focal, focal, rotation, translation)
    }

    pub fn validate(&self) -> Result<()> {
        let dev = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        if dev > 1e-6 || self.rotation.determinant() < 0.0 {
            return Err(Error::NotARotation { deviation: dev });
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !(self.near_clip > 0.0) {
            return Err(Error::Config("near_clip must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("camera resolution must be non-zero".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Row-major 4×4 world-to-camera matrix.
    pub fn pose_matrix(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// The same intrinsics with the pose composed with the inverse of the
    /// world motion `x -> r x + t`, so that moved geometry projects where
    /// the unmoved geometry projected before.
    pub fn compose_inverse_motion(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> Camera {
        let mut cam = self.clone();
        cam.rotation = self.rotation * r.transpose();
        cam.translation = self.translation - cam.rotation * t;
        cam
    }

    /// Pixel position and depth of a world point; `None` when the point is
    /// at or in front of the near plane.
    pub fn project_point(&self, x_world: &Vector3<f64>) -> Option<(Vector2<f64>, f64)> {
        let xc = self.world_to_camera(x_world);
        if xc.z <= self.near_clip {
            return None;
        }
        Some((self.project_camera_point(&xc), xc.z))
    }

    pub fn project_camera_point(&self, xc: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * xc.x / xc.z + self.cx, self.fy * xc.y / xc.z + self.cy)
    }

    /// Jacobian of the perspective projection at a camera-space point.
    pub fn projection_jacobian(&self, xc: &Vector3<f64>) -> Option<Matrix2x3<f64>> {
        if xc.z <= self.near_clip {
            return None;
        }
        Some(jacobian(self.fx, self.fy, xc))
    }

    /// Screen-space covariance `J W Σ W^T J^T` (upper-left 2×2) plus the
    /// low-pass floor.
    pub fn project_covariance(&self, cov3d: &Matrix3<f64>, xc: &Vector3<f64>) -> Option<Matrix2<f64>> {
        let j = self.projection_jacobian(xc)?;
        let cov_cam = self.rotation * cov3d * self.rotation.transpose();
        let cov2d = j * cov_cam * j.transpose();
        Some(symmetrize(&cov2d) + Matrix2::identity() * LOW_PASS_VARIANCE)
    }
}

pub(crate) fn jacobian(fx: f64, fy: f64, xc: &Vector3<f64>) -> Matrix2x3<f64> {
    let inv_z = 1.0 / xc.z;
    let inv_z2 = inv_z * inv_z;
    Matrix2x3::new(
        fx * inv_z,
        0.0,
        -fx * xc.x * inv_z2,
        0.0,
        fy * inv_z,
        -fy * xc.y * inv_z2,
    )
}

fn symmetrize(m: &Matrix2<f64>) -> Matrix2<f64> {
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    Matrix2::new(m[(0, 0)], off, off, m[(1, 1)])
}
