//! Gaussian batch codec: `u32 count` followed by 23 f32 per Gaussian —
//! mean (3), rotation `(w, x, y, z)` (4), log-scale (3), opacity logit (1),
//! SH (12, coefficient-major, RGB within each coefficient).

use nalgebra::Vector3;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::Result;
use crate::gaussian::{Gaussian, GaussianCloud};

pub const FLOATS_PER_GAUSSIAN: usize = 23;
pub const BYTES_PER_GAUSSIAN: usize = 4 * FLOATS_PER_GAUSSIAN;

pub fn encoded_size(count: usize) -> usize {
    4 + BYTES_PER_GAUSSIAN * count
}

pub fn write_cloud(w: &mut ByteWriter, cloud: &GaussianCloud) {
    w.u32(cloud.len() as u32);
    for g in cloud.iter() {
        w.f32s(g.mean.as_slice());
        w.f32s(&g.rotation);
        w.f32s(g.log_scale.as_slice());
        w.f32(g.opacity_logit);
        for c in &g.sh {
            w.f32s(c.as_slice());
        }
    }
}

pub fn read_cloud(r: &mut ByteReader<'_>) -> Result<GaussianCloud> {
    let n = r.u32()? as usize;
    if r.remaining() < n.saturating_mul(BYTES_PER_GAUSSIAN) {
        return Err(r.malformed(format!("count {n} exceeds the block")));
    }
    let mut cloud = GaussianCloud::with_capacity(n);
    for _ in 0..n {
        let v = r.f32s(FLOATS_PER_GAUSSIAN)?;
        let v3 = |k: usize| Vector3::new(v[k], v[k + 1], v[k + 2]);
        cloud.push(Gaussian {
            mean: v3(0),
            rotation: [v[3], v[4], v[5], v[6]],
            log_scale: v3(7),
            opacity_logit: v[10],
            sh: [v3(11), v3(14), v3(17), v3(20)],
        });
    }
    Ok(cloud)
}

pub fn encode_cloud(cloud: &GaussianCloud) -> Vec<u8> {
    let mut w = ByteWriter::new();
    write_cloud(&mut w, cloud);
    w.into_inner()
}

pub fn decode_cloud(bytes: &[u8], block: &str) -> Result<GaussianCloud> {
    let mut r = ByteReader::new(bytes, block);
    let c = read_cloud(&mut r)?;
    r.finish()?;
    Ok(c)
}
