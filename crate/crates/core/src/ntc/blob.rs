//! NTC weight blob.
//!
//! ```text
//! u32 levels, u32 features_per_level, u32 table_size_log2, u32 base_resolution
//! f64 growth_factor, f64×3 aabb_min, f64×3 aabb_max
//! u32 hidden_count, u32×hidden_count widths
//! f32 tables (levels × table_size × features)
//! per layer: f32 weights (outputs × inputs, row-major)
//! ```
//! Header floats are kept at f64 so the grid resolutions reproduce exactly.

use super::{mlp::Mlp, HashGridConfig, NeuralTransformationCache, NtcConfig, OUTPUT_DIM};
use crate::codec::{ByteReader, ByteWriter};
use crate::error::Result;

const HEADER_FIXED: usize = 4 * 4 + 8 * 7 + 4;

pub(super) fn encoded_size(cfg: &NtcConfig) -> usize {
    let g = &cfg.grid;
    let mut params = g.levels * g.table_size() * g.features_per_level;
    let mut prev = g.output_dim();
    for &h in cfg.hidden.iter().chain(std::iter::once(&OUTPUT_DIM)) {
        params += prev * h;
        prev = h;
    }
    HEADER_FIXED + 4 * cfg.hidden.len() + 4 * params
}

fn f64_bits(w: &mut ByteWriter, v: f64) {
    w.u64(v.to_bits());
}

pub(super) fn encode(c: &NeuralTransformationCache) -> Vec<u8> {
    let g = &c.config.grid;
    let mut w = ByteWriter::new();
    w.buf.reserve(encoded_size(&c.config));
    w.u32(g.levels as u32);
    w.u32(g.features_per_level as u32);
    w.u32(g.table_size_log2);
    w.u32(g.base_resolution as u32);
    f64_bits(&mut w, g.growth_factor);
    for v in g.aabb_min.iter().chain(&g.aabb_max) {
        f64_bits(&mut w, *v);
    }
    w.u32(c.config.hidden.len() as u32);
    for &h in &c.config.hidden {
        w.u32(h as u32);
    }
    w.f32s(&c.tables);
    for l in &c.mlp.layers {
        w.f32s(&l.weights);
    }
    w.into_inner()
}

pub(super) fn decode(bytes: &[u8], block: &str) -> Result<NeuralTransformationCache> {
    let mut r = ByteReader::new(bytes, block);
    let levels = r.u32()? as usize;
    let features_per_level = r.u32()? as usize;
    let table_size_log2 = r.u32()?;
    let base_resolution = r.u32()? as usize;
    let growth_factor = f64::from_bits(r.u64()?);
    let mut aabb = [0.0; 6];
    for v in &mut aabb {
        *v = f64::from_bits(r.u64()?);
    }
    let n_hidden = r.u32()? as usize;
    if n_hidden > 64 {
        return Err(r.malformed("implausible hidden layer count"));
    }
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(r.u32()? as usize);
    }
    let config = NtcConfig {
        grid: HashGridConfig {
            levels,
            features_per_level,
            table_size_log2,
            base_resolution,
            growth_factor,
            aabb_min: [aabb[0], aabb[1], aabb[2]],
            aabb_max: [aabb[3], aabb[4], aabb[5]],
        },
        hidden,
    };
    config
        .validate()
        .map_err(|e| r.malformed(format!("bad NTC header: {e}")))?;
    if r.remaining() + r.position() != encoded_size(&config) {
        return Err(r.malformed(format!(
            "blob is {} bytes, header implies {}",
            bytes.len(),
            encoded_size(&config)
        )));
    }
    let g = &config.grid;
    let tables = r.f32s(g.levels * g.table_size() * g.features_per_level)?;
    let mut mlp = Mlp {
        layers: Vec::with_capacity(config.hidden.len() + 1),
    };
    let mut prev = g.output_dim();
    for &h in config.hidden.iter().chain(std::iter::once(&OUTPUT_DIM)) {
        let mut d = super::mlp::Dense::zeros(prev, h);
        d.weights = r.f32s(prev * h)?;
        mlp.layers.push(d);
        prev = h;
    }
    r.finish()?;
    Ok(NeuralTransformationCache::from_parts(config, tables, mlp))
}
