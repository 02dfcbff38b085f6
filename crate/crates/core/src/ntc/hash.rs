//! Multi-resolution hash encoding.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashGridConfig {
    pub levels: usize,
    pub features_per_level: usize,
    pub table_size_log2: u32,
    pub base_resolution: usize,
    pub growth_factor: f64,
    pub aabb_min: [f64; 3],
    pub aabb_max: [f64; 3],
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig::with_finest_resolution(16, 4, 15, 16, 512, [-1.0; 3], [1.0; 3])
    }
}

impl HashGridConfig {
    /// Picks the growth factor so that the last level has `finest` cells.
    pub fn with_finest_resolution(
        levels: usize,
        features_per_level: usize,
        table_size_log2: u32,
        base_resolution: usize,
        finest: usize,
        aabb_min: [f64; 3],
        aabb_max: [f64; 3],
    ) -> Self {
        let growth_factor = if levels > 1 {
            ((finest as f64 / base_resolution as f64).ln() / (levels - 1) as f64).exp()
        } else {
            1.5
        };
        HashGridConfig {
            levels,
            features_per_level,
            table_size_log2,
            base_resolution,
            growth_factor,
            aabb_min,
            aabb_max,
        }
    }

    /// Smaller grid used at desk scale: 8 levels of 2 features, 2¹² slots.
    pub fn desk(aabb_min: [f64; 3], aabb_max: [f64; 3]) -> Self {
        HashGridConfig::with_finest_resolution(8, 2, 12, 16, 512, aabb_min, aabb_max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.features_per_level == 0 {
            return Err(Error::Config("hash grid needs at least one level and feature".into()));
        }
        if !(self.growth_factor > 1.0) && self.levels > 1 {
            return Err(Error::Config("growth_factor must exceed 1".into()));
        }
        if self.table_size_log2 == 0 || self.table_size_log2 > 28 {
            return Err(Error::Config("table_size_log2 must lie in 1..=28".into()));
        }
        if self.base_resolution == 0 {
            return Err(Error::Config("base_resolution must be positive".into()));
        }
        for k in 0..3 {
            if !(self.aabb_min[k] < self.aabb_max[k]) {
                return Err(Error::Config("aabb_min must be below aabb_max on every axis".into()));
            }
        }
        Ok(())
    }

    pub fn table_size(&self) -> usize {
        1 << self.table_size_log2
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    /// Cells per axis at `level`.
    pub fn resolution(&self, level: usize) -> usize {
        (self.base_resolution as f64 * self.growth_factor.powi(level as i32)).floor() as usize
    }

    pub fn extent(&self) -> Vector3<f64> {
        Vector3::from(self.aabb_max) - Vector3::from(self.aabb_min)
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        (0..3).all(|k| x[k] >= self.aabb_min[k] && x[k] <= self.aabb_max[k])
    }

    /// Maps a world point into the unit cube.
    pub fn normalize(&self, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        if !self.contains(x) {
            return Err(Error::OutsideBounds { x: x.x, y: x.y, z: x.z });
        }
        Ok((x - Vector3::from(self.aabb_min)).component_div(&self.extent()))
    }

    /// Table slot of an integer grid vertex at `level`.
    pub fn slot(&self, level: usize, corner: [u32; 3]) -> usize {
        let side = self.resolution(level) + 1;
        let t = self.table_size();
        if side.saturating_mul(side).saturating_mul(side) <= t {
            corner[0] as usize + side * (corner[1] as usize + side * corner[2] as usize)
        } else {
            let h = corner[0].wrapping_mul(PRIMES[0])
                ^ corner[1].wrapping_mul(PRIMES[1])
                ^ corner[2].wrapping_mul(PRIMES[2]);
            (h as usize) & (t - 1)
        }
    }
}

/// Corner slots and trilinear weights of one point at every level; the
/// `8 * levels` entries are level-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub slots: Vec<u32>,
    pub weights: Vec<f64>,
}

pub fn stencil(cfg: &HashGridConfig, x: &Vector3<f64>) -> Result<Stencil> {
    let u = cfg.normalize(x)?;
    let mut slots = Vec::with_capacity(8 * cfg.levels);
    let mut weights = Vec::with_capacity(8 * cfg.levels);
    for level in 0..cfg.levels {
        let res = cfg.resolution(level);
        let mut cell = [0u32; 3];
        let mut frac = [0.0; 3];
        for k in 0..3 {
            let p = u[k] * res as f64;
            let c = (p.floor() as i64).clamp(0, res as i64 - 1);
            cell[k] = c as u32;
            frac[k] = p - c as f64;
        }
        for corner in 0..8u32 {
            let mut w = 1.0;
            let mut v = cell;
            for k in 0..3 {
                if corner >> k & 1 == 1 {
                    v[k] += 1;
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            slots.push(cfg.slot(level, v) as u32);
            weights.push(w);
        }
    }
    Ok(Stencil { slots, weights })
}

/// Interpolated features of one stencil, level-major.
pub fn gather(cfg: &HashGridConfig, tables: &[f64], st: &Stencil, out: &mut [f64]) {
    let d = cfg.features_per_level;
    let t = cfg.table_size();
    out.iter_mut().for_each(|v| *v = 0.0);
    for level in 0..cfg.levels {
        let dst = &mut out[level * d..(level + 1) * d];
        for c in 0..8 {
            let e = level * 8 + c;
            let w = st.weights[e];
            if w == 0.0 {
                continue;
            }
            let row = (level * t + st.slots[e] as usize) * d;
            for f in 0..d {
                dst[f] += w * tables[row + f];
            }
        }
    }
}

/// Adjoint of [`gather`]: adds `w · grad` into every corner row and marks
/// the rows touched.
pub fn scatter(cfg: &HashGridConfig, st: &Stencil, grad: &[f64], table_grads: &mut [f64], touched: &mut [bool]) {
    let d = cfg.features_per_level;
    let t = cfg.table_size();
    for level in 0..cfg.levels {
        let src = &grad[level * d..(level + 1) * d];
        for c in 0..8 {
            let e = level * 8 + c;
            let w = st.weights[e];
            let r = level * t + st.slots[e] as usize;
            touched[r] = true;
            for f in 0..d {
                table_grads[r * d + f] += w * src[f];
            }
        }
    }
}
