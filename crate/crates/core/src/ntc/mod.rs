//! Neural transformation cache: a hash-grid encoded MLP mapping a
//! Gaussian's mean to a per-frame translation and rotation.
//!
//! The quaternion head is offset by the identity: `dq = out[3..7] + (1,0,0,0)`.
//! With the zero-initialized output layer a fresh cache therefore yields
//! `dμ = 0, dq = identity` and leaves every Gaussian exactly in place.

mod blob;
pub mod hash;
pub mod mlp;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::warmup_loss;
use crate::optim::{AdamConfig, AdamMoments};
use crate::quat::Quat;

pub use hash::{HashGridConfig, Stencil};
pub use mlp::Mlp;

pub const OUTPUT_DIM: usize = 7;
const TABLE_INIT: f64 = 1e-4;
const BACKWARD_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtcConfig {
    pub grid: HashGridConfig,
    pub hidden: Vec<usize>,
}

impl Default for NtcConfig {
    fn default() -> Self {
        NtcConfig {
            grid: HashGridConfig::default(),
            hidden: vec![64, 64],
        }
    }
}

impl NtcConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Adam moments for the tables and the MLP plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct NtcOptimizer {
    pub tables: AdamMoments,
    pub mlp: AdamMoments,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralTransformationCache {
    pub config: NtcConfig,
    /// `levels × table_size × features`, row-major.
    pub tables: Vec<f64>,
    pub mlp: Mlp,
    pub optimizer: NtcOptimizer,
}

/// Encoding stencils for a fixed set of means, reusable across iterations.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    pub stencils: Vec<Stencil>,
}

impl EncodedBatch {
    pub fn len(&self) -> usize {
        self.stencils.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stencils.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NtcOutput {
    pub d_mu: Vec<Vector3<f64>>,
    /// Un-normalized rotation quaternions.
    pub d_q: Vec<Quat>,
}

/// Per-sample activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct NtcTape {
    acts: Vec<mlp::Activations>,
}

#[derive(Debug, Clone)]
pub struct NtcGradients {
    pub tables: Vec<f64>,
    /// One flag per table row (`levels × table_size`).
    pub touched: Vec<bool>,
    pub mlp: Mlp,
}

impl NtcGradients {
    pub fn touched_rows(&self) -> Vec<usize> {
        self.touched
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| t.then_some(i))
            .collect()
    }
}

impl NeuralTransformationCache {
    pub fn new(config: NtcConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = &config.grid;
        let n = g.levels * g.table_size() * g.features_per_level;
        let tables = (0..n).map(|_| rng.random_range(-TABLE_INIT..TABLE_INIT)).collect();
        let mlp = Mlp::new(g.output_dim(), &config.hidden, OUTPUT_DIM, &mut rng);
        Ok(Self::from_parts(config, tables, mlp))
    }

    pub(crate) fn from_parts(config: NtcConfig, tables: Vec<f64>, mlp: Mlp) -> Self {
        let optimizer = NtcOptimizer {
            tables: AdamMoments::zeros(tables.len()),
            mlp: AdamMoments::zeros(mlp.param_count()),
            step: 0,
        };
        NeuralTransformationCache {
            config,
            tables,
            mlp,
            optimizer,
        }
    }

    pub fn grid(&self) -> &HashGridConfig {
        &self.config.grid
    }

    pub fn param_count(&self) -> usize {
        self.tables.len() + self.mlp.param_count()
    }

    /// Clears the Adam moments and step counter.
    pub fn reset_optimizer(&mut self) {
        self.optimizer = NtcOptimizer {
            tables: AdamMoments::zeros(self.tables.len()),
            mlp: AdamMoments::zeros(self.mlp.param_count()),
            step: 0,
        };
    }

    /// Copy of the parameters with fresh optimizer state.
    pub fn snapshot(&self) -> Self {
        Self::from_parts(self.config.clone(), self.tables.clone(), self.mlp.clone())
    }

    /// Rounds every parameter to f32 so the in-memory cache equals its
    /// serialized form.
    pub fn quantize_f32(&mut self) {
        let r = crate::codec::round_f32;
        self.tables.iter_mut().for_each(|v| *v = r(*v));
        for l in &mut self.mlp.layers {
            l.weights.iter_mut().for_each(|v| *v = r(*v));
        }
    }

    pub fn prepare(&self, means: &[Vector3<f64>]) -> Result<EncodedBatch> {
        let stencils = means
            .par_iter()
            .map(|m| hash::stencil(self.grid(), m))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncodedBatch { stencils })
    }

    /// Hash encoding of a single point.
    pub fn encode(&self, x: &Vector3<f64>) -> Result<Vec<f64>> {
        let st = hash::stencil(self.grid(), x)?;
        let mut out = vec![0.0; self.grid().output_dim()];
        hash::gather(self.grid(), &self.tables, &st, &mut out);
        Ok(out)
    }

    pub fn forward(&self, batch: &EncodedBatch) -> (NtcOutput, NtcTape) {
        let dim = self.grid().output_dim();
        let acts: Vec<mlp::Activations> = batch
            .stencils
            .par_iter()
            .map(|st| {
                let mut feat = vec![0.0; dim];
                hash::gather(self.grid(), &self.tables, st, &mut feat);
                self.mlp.forward(&feat)
            })
            .collect();
        let mut out = NtcOutput {
            d_mu: Vec::with_capacity(acts.len()),
            d_q: Vec::with_capacity(acts.len()),
        };
        for a in &acts {
            let y = a.last().unwrap();
            out.d_mu.push(Vector3::new(y[0], y[1], y[2]));
            out.d_q.push([y[3] + 1.0, y[4], y[5], y[6]]);
        }
        (out, NtcTape { acts })
    }

    /// Convenience forward for points that have not been prepared.
    pub fn evaluate(&self, means: &[Vector3<f64>]) -> Result<NtcOutput> {
        Ok(self.forward(&self.prepare(means)?).0)
    }

    /// Reverse-mode gradients of `Σ d_mu·dμ + d_q·dq` with respect to every
    /// table entry and MLP parameter.
    pub fn backward(
        &self,
        batch: &EncodedBatch,
        tape: &NtcTape,
        d_mu: &[Vector3<f64>],
        d_q: &[Quat],
    ) -> Result<NtcGradients> {
        let n = batch.len();
        if tape.acts.len() != n || d_mu.len() != n || d_q.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} samples"),
                found: format!("tape {}, d_mu {}, d_q {}", tape.acts.len(), d_mu.len(), d_q.len()),
            });
        }
        // MLP parameter gradients are reduced per fixed-size chunk, in
        // chunk order, so the result does not depend on scheduling.
        let partial: Vec<(Mlp, Vec<Vec<f64>>)> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(BACKWARD_CHUNK)
            .map(|idx| {
                let mut g = self.mlp.zeros_like();
                let feats = idx
                    .iter()
                    .map(|&i| {
                        let m = d_mu[i];
                        let q = d_q[i];
                        let dy = [m.x, m.y, m.z, q[0], q[1], q[2], q[3]];
                        self.mlp.backward(&tape.acts[i], &dy, &mut g)
                    })
                    .collect();
                (g, feats)
            })
            .collect();
        let grid = self.grid();
        let mut grads = NtcGradients {
            tables: vec![0.0; self.tables.len()],
            touched: vec![false; grid.levels * grid.table_size()],
            mlp: self.mlp.zeros_like(),
        };
        let mut i = 0;
        for (g, feats) in partial {
            grads.mlp.add_assign(&g);
            for f in feats {
                hash::scatter(grid, &batch.stencils[i], &f, &mut grads.tables, &mut grads.touched);
                i += 1;
            }
        }
        Ok(grads)
    }

    /// One Adam step on the MLP and on the touched table rows only.
    pub fn adam_step(&mut self, grads: &NtcGradients, lr: f64, cfg: &AdamConfig) {
        self.optimizer.step += 1;
        let step = self.optimizer.step;
        let rows = grads.touched_rows();
        let d = self.grid().features_per_level;
        self.optimizer
            .tables
            .step_rows(&mut self.tables, &grads.tables, d, &rows, lr, step, cfg);
        let mut p = self.mlp.flatten();
        self.optimizer.mlp.step(&mut p, &grads.mlp.flatten(), lr, step, cfg);
        self.mlp.unflatten(&p);
    }

    /// Pre-trains toward the identity transform on noise-augmented copies of
    /// `means` and returns the resulting parameter snapshot. Noisy points are
    /// clamped into the bounding box.
    pub fn warmup_train(&mut self, means: &[Vector3<f64>], opts: &WarmupOptions) -> Result<(Self, Vec<f64>)> {
        if means.is_empty() {
            return Err(Error::Config("warm-up needs at least one mean".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let noise =
            Normal::new(0.0, opts.noise_sigma.max(0.0)).map_err(|e| Error::Config(format!("warm-up noise: {e}")))?;
        let grid = self.grid().clone();
        let mut losses = Vec::with_capacity(opts.iterations);
        self.reset_optimizer();
        for _ in 0..opts.iterations {
            let pts: Vec<Vector3<f64>> = if means.len() <= opts.batch_size {
                means.to_vec()
            } else {
                (0..opts.batch_size)
                    .map(|_| means[rng.random_range(0..means.len())])
                    .collect()
            };
            let pts: Vec<Vector3<f64>> = pts
                .into_iter()
                .map(|m| {
                    let mut p = m + Vector3::from_fn(|_, _| noise.sample(&mut rng));
                    for k in 0..3 {
                        p[k] = p[k].clamp(grid.aabb_min[k], grid.aabb_max[k]);
                    }
                    p
                })
                .collect();
            let batch = self.prepare(&pts)?;
            let (out, tape) = self.forward(&batch);
            let (loss, g_mu, g_q) = warmup_loss(&out.d_mu, &out.d_q)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    tensor: "warm-up loss".into(),
                });
            }
            losses.push(loss);
            let grads = self.backward(&batch, &tape, &g_mu, &g_q)?;
            self.adam_step(&grads, opts.lr, &opts.adam);
        }
        self.quantize_f32();
        Ok((self.snapshot(), losses))
    }

    pub fn first_non_finite(&self) -> Option<&'static str> {
        if self.tables.iter().any(|v| !v.is_finite()) {
            return Some("ntc hash tables");
        }
        if self.mlp.flatten().iter().any(|v| !v.is_finite()) {
            return Some("ntc mlp weights");
        }
        None
    }

    pub fn to_blob(&self) -> Vec<u8> {
        blob::encode(self)
    }

    pub fn from_blob(bytes: &[u8], block: &str) -> Result<Self> {
        blob::decode(bytes, block)
    }

    /// Serialized size in bytes.
    pub fn blob_size(&self) -> usize {
        blob::encoded_size(&self.config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupOptions {
    pub iterations: usize,
    pub noise_sigma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl WarmupOptions {
    /// Noise scale of 1% of the bounding-box diagonal.
    pub fn for_grid(grid: &HashGridConfig, iterations: usize, seed: u64) -> Self {
        WarmupOptions {
            iterations,
            noise_sigma: 0.01 * grid.extent().norm(),
            lr: 0.002,
            batch_size: 65_536,
            seed,
            adam: AdamConfig::default(),
        }
    }
}
