//! Viewer bundle: one fully materialized render set per frame, so a player
//! needs no transformation cache.
//!
//! `frame_NNNNN.bin`:
//! ```text
//! "GSVF", u32 version, u32 count N
//! f32 means[3N], f32 unit quaternions (w, x, y, z)[4N], f32 scales[3N],
//! f32 opacities[N], f32 SH[12N] (coefficient-major, RGB inner)
//! ```
//! Scales and opacities are activated (`exp`, `sigmoid`). `metadata.json`
//! lists the frames, their Gaussian counts, the cameras and conventions.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::CameraSpec;
use super::stream::StreamReader;
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::gaussian::{sigmoid, GaussianCloud};
use crate::pipeline::Player;
use crate::quat;

pub const BUNDLE_MAGIC: [u8; 4] = *b"GSVF";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub format: String,
    pub version: u32,
    pub frame_count: usize,
    pub first_frame: usize,
    pub files: Vec<String>,
    pub gaussian_counts: Vec<usize>,
    pub cameras: Vec<CameraSpec>,
    pub background: [f64; 3],
    pub sh_degree: u32,
    pub conventions: Conventions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub camera_axes: String,
    pub pose: String,
    pub quaternion: String,
    pub sh_layout: String,
    pub pixel_center: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            camera_axes: "x right, y down, z forward".into(),
            pose: "row-major 4x4 world-to-camera".into(),
            quaternion: "w x y z, unit norm".into(),
            sh_layout: "degree 1; coefficient-major (dc, y, z, x) with RGB inner; basis (-c1 y, c1 z, -c1 x); color = 0.28209479 dc + basis + 0.5".into(),
            pixel_center: "(i + 0.5, j + 0.5)".into(),
        }
    }
}

/// Activated, renderer-ready arrays of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleFrame {
    pub means: Vec<f32>,
    pub quats: Vec<f32>,
    pub scales: Vec<f32>,
    pub opacities: Vec<f32>,
    pub sh: Vec<f32>,
}

impl BundleFrame {
    pub fn from_cloud(c: &GaussianCloud) -> Result<Self> {
        let n = c.len();
        let mut f = BundleFrame {
            means: Vec::with_capacity(3 * n),
            quats: Vec::with_capacity(4 * n),
            scales: Vec::with_capacity(3 * n),
            opacities: Vec::with_capacity(n),
            sh: Vec::with_capacity(12 * n),
        };
        for i in 0..n {
            f.means.extend(c.means[i].iter().map(|&v| v as f32));
            f.quats
                .extend(quat::normalize(&c.rotations[i])?.iter().map(|&v| v as f32));
            f.scales.extend(c.scale(i).iter().map(|&v| v as f32));
            f.opacities.push(sigmoid(c.opacity_logits[i]) as f32);
            for k in &c.sh[i] {
                f.sh.extend(k.iter().map(|&v| v as f32));
            }
        }
        Ok(f)
    }

    pub fn count(&self) -> usize {
        self.opacities.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(&BUNDLE_MAGIC);
        w.u32(BUNDLE_VERSION);
        w.u32(self.count() as u32);
        for arr in [&self.means, &self.quats, &self.scales, &self.opacities, &self.sh] {
            for v in arr.iter() {
                w.bytes(&v.to_le_bytes());
            }
        }
        w.into_inner()
    }

    pub fn decode(bytes: &[u8], block: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, block);
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != BUNDLE_MAGIC {
            return Err(Error::BadMagic {
                expected: BUNDLE_MAGIC,
                found: magic,
            });
        }
        let version = r.u32()?;
        if version != BUNDLE_VERSION {
            return Err(Error::VersionMismatch {
                expected: BUNDLE_VERSION as u16,
                found: version.min(u16::MAX as u32) as u16,
            });
        }
        let n = r.u32()? as usize;
        if r.remaining() != n.saturating_mul(23 * 4) {
            return Err(r.malformed(format!("{} bytes for {n} gaussians", r.remaining())));
        }
        let mut read = |k: usize| -> Result<Vec<f32>> { Ok(r.f32s(k * n)?.into_iter().map(|v| v as f32).collect()) };
        Ok(BundleFrame {
            means: read(3)?,
            quats: read(4)?,
            scales: read(3)?,
            opacities: read(1)?,
            sh: read(12)?,
        })
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.bin")
}

/// Writes frames `range` (inclusive start, exclusive end, over 0..=T) of
/// the stream into `out_dir`.
pub fn export_viewer_bundle(
    stream: &StreamReader,
    range: std::ops::Range<usize>,
    out_dir: &Path,
) -> Result<BundleMetadata> {
    let count = stream.frame_count();
    if range.start >= range.end || range.end > count {
        return Err(Error::FrameOutOfRange {
            index: range.end.saturating_sub(1).max(range.start),
            count,
        });
    }
    fs::create_dir_all(out_dir)?;
    let mut player = Player::new(stream)?;
    let mut meta = BundleMetadata {
        format: "GSVF".into(),
        version: BUNDLE_VERSION,
        frame_count: range.len(),
        first_frame: range.start,
        files: Vec::new(),
        gaussian_counts: Vec::new(),
        cameras: stream.info.cameras.clone(),
        background: stream.info.background,
        sh_degree: 1,
        conventions: Conventions::default(),
    };
    for i in 0..range.end {
        let set = player.render_set(i)?;
        if i < range.start {
            continue;
        }
        let frame = BundleFrame::from_cloud(&set)?;
        let name = frame_file_name(i);
        fs::write(out_dir.join(&name), frame.encode())?;
        meta.files.push(name);
        meta.gaussian_counts.push(frame.count());
    }
    fs::write(out_dir.join("metadata.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

pub fn read_bundle_metadata(dir: &Path) -> Result<BundleMetadata> {
    let p = dir.join("metadata.json");
    if !p.exists() {
        return Err(Error::MissingFile { path: p });
    }
    Ok(serde_json::from_str(&fs::read_to_string(p)?)?)
}

pub fn read_bundle_frame(dir: &Path, index: usize) -> Result<BundleFrame> {
    let p = dir.join(frame_file_name(index));
    if !p.exists() {
        return Err(Error::MissingFile { path: p });
    }
    BundleFrame::decode(&fs::read(&p)?, &frame_file_name(index))
}
