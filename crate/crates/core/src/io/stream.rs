//! The stream container.
//!
//! ```text
//! header  : "GSTR", u16 version, u16 reserved (0)
//! block   : u8 kind, 3 reserved bytes (0), u32 payload length, payload,
//!           u32 CRC-32 of everything from `kind` through the payload
//! kinds   : 1 scene info (UTF-8 JSON), 2 warm-up NTC blob,
//!           3 initial cloud (Gaussian batch), 4 frame record
//! frame   : u32 frame index, u32 NTC blob length, NTC blob, Gaussian batch
//! ```
//! Blocks appear in kind order with exactly one each of kinds 1–3, then any
//! number of frame records for frames 1, 2, …. Each block is
//! self-delimiting, so the file can be scanned without an index.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::dataset::CameraSpec;
use super::gaussians;
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::ntc::NeuralTransformationCache;
use crate::raster::RasterConfig;

pub const STREAM_MAGIC: [u8; 4] = *b"GSTR";
pub const STREAM_VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 8;
/// Block framing: kind, reserved, length, CRC.
pub const BLOCK_OVERHEAD: usize = 12;
/// Fixed bytes of a frame block beyond the NTC blob and the Gaussian
/// records: framing, frame index, blob length, Gaussian count.
pub const FRAME_OVERHEAD: usize = BLOCK_OVERHEAD + 4 + 4 + 4;

const KIND_SCENE: u8 = 1;
const KIND_WARMUP: u8 = 2;
const KIND_INITIAL: u8 = 3;
const KIND_FRAME: u8 = 4;

/// Everything a player needs besides the Gaussians to reproduce training
/// renders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneInfo {
    pub background: [f64; 3],
    pub raster: RasterConfig,
    pub rotate_sh: bool,
    #[serde(default)]
    pub cameras: Vec<CameraSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: usize,
    pub ntc_blob: Vec<u8>,
    pub additional: GaussianCloud,
}

impl FrameRecord {
    pub fn ntc(&self) -> Result<NeuralTransformationCache> {
        NeuralTransformationCache::from_blob(&self.ntc_blob, &format!("frame {}", self.frame_index))
    }

    fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.u32(self.frame_index as u32);
        w.u32(self.ntc_blob.len() as u32);
        w.bytes(&self.ntc_blob);
        gaussians::write_cloud(&mut w, &self.additional);
        w.into_inner()
    }

    fn decode(payload: &[u8], block: &str) -> Result<Self> {
        let mut r = ByteReader::new(payload, block);
        let frame_index = r.u32()? as usize;
        let n = r.u32()? as usize;
        let ntc_blob = r.take(n)?.to_vec();
        let additional = gaussians::read_cloud(&mut r)?;
        r.finish()?;
        Ok(FrameRecord {
            frame_index,
            ntc_blob,
            additional,
        })
    }

    /// Storage split of this record once written.
    pub fn size_row(&self) -> SizeRow {
        let additional_bytes = gaussians::BYTES_PER_GAUSSIAN * self.additional.len();
        SizeRow {
            frame: self.frame_index,
            ntc_bytes: self.ntc_blob.len(),
            additional_bytes,
            additional_count: self.additional.len(),
            overhead_bytes: FRAME_OVERHEAD,
            total_bytes: FRAME_OVERHEAD + self.ntc_blob.len() + additional_bytes,
        }
    }
}

/// Per-frame storage accounting; `total = ntc + additional + overhead`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SizeRow {
    pub frame: usize,
    pub ntc_bytes: usize,
    pub additional_bytes: usize,
    pub additional_count: usize,
    pub overhead_bytes: usize,
    pub total_bytes: usize,
}

fn block_bytes(kind: u8, payload: &[u8]) -> Vec<u8> {
    let mut b = Vec::with_capacity(payload.len() + BLOCK_OVERHEAD);
    b.push(kind);
    b.extend_from_slice(&[0; 3]);
    b.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    b.extend_from_slice(payload);
    let crc = crc32fast::hash(&b);
    b.extend_from_slice(&crc.to_le_bytes());
    b
}

/// Writes a stream incrementally; every frame is flushed as soon as it is
/// added.
pub struct StreamWriter<W: Write> {
    out: W,
    bytes: usize,
    frames: usize,
}

impl<W: Write> StreamWriter<W> {
    pub fn new(
        mut out: W,
        info: &SceneInfo,
        warmup: &NeuralTransformationCache,
        initial: &GaussianCloud,
    ) -> Result<Self> {
        let mut head = Vec::new();
        head.extend_from_slice(&STREAM_MAGIC);
        head.extend_from_slice(&STREAM_VERSION.to_le_bytes());
        head.extend_from_slice(&[0; 2]);
        head.extend(block_bytes(KIND_SCENE, serde_json::to_string(info)?.as_bytes()));
        head.extend(block_bytes(KIND_WARMUP, &warmup.to_blob()));
        head.extend(block_bytes(KIND_INITIAL, &gaussians::encode_cloud(initial)));
        out.write_all(&head)?;
        out.flush()?;
        Ok(StreamWriter {
            out,
            bytes: head.len(),
            frames: 0,
        })
    }

    pub fn write_frame(&mut self, record: &FrameRecord) -> Result<SizeRow> {
        if record.frame_index != self.frames + 1 {
            return Err(Error::Config(format!(
                "frame {} written out of order (expected {})",
                record.frame_index,
                self.frames + 1
            )));
        }
        let b = block_bytes(KIND_FRAME, &record.encode());
        self.out.write_all(&b)?;
        self.out.flush()?;
        self.bytes += b.len();
        self.frames += 1;
        let row = record.size_row();
        debug_assert_eq!(row.total_bytes, b.len());
        Ok(row)
    }

    pub fn bytes_written(&self) -> usize {
        self.bytes
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// A fully parsed stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamReader {
    pub info: SceneInfo,
    pub warmup: NeuralTransformationCache,
    pub initial: GaussianCloud,
    pub frames: Vec<FrameRecord>,
    /// Byte size of the header and the three leading blocks.
    pub preamble_bytes: usize,
}

fn next_block<'a>(r: &mut ByteReader<'a>, name: &str, expect: u8) -> Result<&'a [u8]> {
    let mut hdr = ByteReader::new(r.take(8).map_err(|_| Error::Truncated { block: name.into() })?, name);
    let kind = hdr.u8()?;
    let len = {
        hdr.take(3)?;
        hdr.u32()? as usize
    };
    if kind != expect {
        return Err(Error::Malformed {
            block: name.into(),
            reason: format!("block kind {kind}, expected {expect}"),
        });
    }
    let payload = r.take(len).map_err(|_| Error::Truncated { block: name.into() })?;
    let crc = r.u32().map_err(|_| Error::Truncated { block: name.into() })?;
    let mut h = crc32fast::Hasher::new();
    h.update(&[kind, 0, 0, 0]);
    h.update(&(len as u32).to_le_bytes());
    h.update(payload);
    if h.finalize() != crc {
        return Err(Error::Checksum { block: name.into() });
    }
    Ok(payload)
}

impl StreamReader {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "stream header");
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != STREAM_MAGIC {
            return Err(Error::BadMagic {
                expected: STREAM_MAGIC,
                found: magic,
            });
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != STREAM_VERSION {
            return Err(Error::VersionMismatch {
                expected: STREAM_VERSION,
                found: version,
            });
        }
        r.take(2)?;
        let scene = next_block(&mut r, "scene info", KIND_SCENE)?;
        let info: SceneInfo = serde_json::from_slice(scene).map_err(|e| Error::Malformed {
            block: "scene info".into(),
            reason: e.to_string(),
        })?;
        let warmup =
            NeuralTransformationCache::from_blob(next_block(&mut r, "warm-up ntc", KIND_WARMUP)?, "warm-up ntc")?;
        let initial = gaussians::decode_cloud(next_block(&mut r, "initial cloud", KIND_INITIAL)?, "initial cloud")?;
        let preamble_bytes = r.position();
        let mut frames = Vec::new();
        while r.remaining() > 0 {
            let name = format!("frame {}", frames.len() + 1);
            let rec = FrameRecord::decode(next_block(&mut r, &name, KIND_FRAME)?, &name)?;
            if rec.frame_index != frames.len() + 1 {
                return Err(Error::Malformed {
                    block: name,
                    reason: format!("records frame index {}", rec.frame_index),
                });
            }
            frames.push(rec);
        }
        Ok(StreamReader {
            info,
            warmup,
            initial,
            frames,
            preamble_bytes,
        })
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut b = Vec::new();
        input.read_to_end(&mut b)?;
        Self::from_bytes(&b)
    }

    pub fn open(path: &std::path::Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile {
                path: path.to_path_buf(),
            });
        }
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Frames including frame 0.
    pub fn frame_count(&self) -> usize {
        self.frames.len() + 1
    }

    pub fn size_rows(&self) -> Vec<SizeRow> {
        self.frames.iter().map(FrameRecord::size_row).collect()
    }

    /// Re-encodes the stream; equal to the original bytes for any stream
    /// this crate wrote.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = StreamWriter::new(Vec::new(), &self.info, &self.warmup, &self.initial)?;
        for f in &self.frames {
            w.write_frame(f)?;
        }
        Ok(w.into_inner())
    }
}

/// Size table with the columns `frame, NTC (KB), New 3DGs (KB), Overhead (KB),
/// Total (KB)`.
pub fn format_size_report(rows: &[SizeRow]) -> String {
    let kb = |b: usize| b as f64 / 1024.0;
    let mut s = format!(
        "{:>6} {:>12} {:>15} {:>14} {:>12} {:>8}\n",
        "frame", "NTC (KB)", "New 3DGs (KB)", "Overhead (KB)", "Total (KB)", "New 3DGs"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>6} {:>12.3} {:>15.3} {:>14.3} {:>12.3} {:>8}\n",
            r.frame,
            kb(r.ntc_bytes),
            kb(r.additional_bytes),
            kb(r.overhead_bytes),
            kb(r.total_bytes),
            r.additional_count
        ));
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&SizeRow) -> usize| rows.iter().map(|r| kb(f(r))).sum::<f64>() / n;
        s.push_str(&format!(
            "{:>6} {:>12.3} {:>15.3} {:>14.3} {:>12.3} {:>8.1}\n",
            "mean",
            mean(&|r| r.ntc_bytes),
            mean(&|r| r.additional_bytes),
            mean(&|r| r.overhead_bytes),
            mean(&|r| r.total_bytes),
            rows.iter().map(|r| r.additional_count as f64).sum::<f64>() / n
        ));
    }
    s
}
