//! Multi-view video datasets: a JSON manifest listing cameras (intrinsics
//! and row-major 4×4 world-to-camera poses), the train/test split, and one
//! PNG per camera per frame.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::png::read_png;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::view::View;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major world-to-camera transform; camera axes are x right,
    /// y down, z forward.
    pub world_to_camera: [[f64; 4]; 4],
}

impl CameraSpec {
    pub fn from_camera(id: impl Into<String>, c: &Camera) -> Self {
        CameraSpec {
            id: id.into(),
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            world_to_camera: c.pose_matrix(),
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        let m = &self.world_to_camera;
        let bad = |reason: String| Error::MalformedPose {
            camera: self.id.clone(),
            reason,
        };
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(bad("non-finite entry".into()));
        }
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(bad(format!("last row is {:?}, expected [0, 0, 0, 1]", m[3])));
        }
        let rotation = Matrix3::from_fn(|r, c| m[r][c]);
        let translation = Vector3::new(m[0][3], m[1][3], m[2][3]);
        let mut cam = Camera::new(self.width, self.height, self.fx, self.fy, rotation, translation)
            .map_err(|e| bad(e.to_string()))?;
        cam.cx = self.cx;
        cam.cy = self.cy;
        Ok(cam)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    /// Camera id → image path relative to the manifest.
    pub images: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub cameras: Vec<CameraSpec>,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub frames: Vec<FrameEntry>,
    /// Frame-0 point set (`x y z r g b` per line), relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_points: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<[f64; 3]>,
    /// Suggested bounding box for the transformation cache.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aabb: Option<[[f64; 3]; 2]>,
}

impl DatasetManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Dataset(format!(
                "manifest version {} (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        let mut ids: Vec<&str> = self.cameras.iter().map(|c| c.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Dataset("duplicate camera id".into()));
        }
        for id in self.train.iter().chain(&self.test) {
            if ids.binary_search(&id.as_str()).is_err() {
                return Err(Error::Dataset(format!("split names unknown camera {id}")));
            }
        }
        if self.train.is_empty() {
            return Err(Error::Dataset("no training cameras".into()));
        }
        if self.frames.is_empty() {
            return Err(Error::Dataset("no frames".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            for id in self.train.iter().chain(&self.test) {
                if !f.images.contains_key(id) {
                    return Err(Error::Dataset(format!("frame {i} has no image for camera {id}")));
                }
            }
            if let Some(k) = f.images.keys().find(|k| ids.binary_search(&k.as_str()).is_err()) {
                return Err(Error::Dataset(format!("frame {i} names unknown camera {k}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FrameViews {
    pub index: usize,
    pub train: Vec<View>,
    pub test: Vec<View>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    cameras: BTreeMap<String, Camera>,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        if !manifest_path.exists() {
            return Err(Error::MissingFile {
                path: manifest_path.to_path_buf(),
            });
        }
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
        manifest.validate()?;
        let cameras = manifest
            .cameras
            .iter()
            .map(|c| Ok((c.id.clone(), c.to_camera()?)))
            .collect::<Result<_>>()?;
        Ok(Dataset {
            root: manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            manifest,
            cameras,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.manifest.frames.len()
    }

    pub fn camera(&self, id: &str) -> Option<&Camera> {
        self.cameras.get(id)
    }

    pub fn train_cameras(&self) -> Vec<Camera> {
        self.manifest.train.iter().map(|id| self.cameras[id].clone()).collect()
    }

    pub fn test_cameras(&self) -> Vec<Camera> {
        self.manifest.test.iter().map(|id| self.cameras[id].clone()).collect()
    }

    pub fn background(&self) -> Option<Vector3<f64>> {
        self.manifest.background.map(Vector3::from)
    }

    fn load_view(&self, frame: usize, id: &str) -> Result<View> {
        let camera = self.cameras[id].clone();
        let path = self.root.join(&self.manifest.frames[frame].images[id]);
        let image = read_png(&path)?;
        if (image.width, image.height) != (camera.width, camera.height) {
            return Err(Error::ResolutionMismatch {
                camera: id.to_string(),
                expected: (camera.width, camera.height),
                found: (image.width, image.height),
            });
        }
        Ok(View { camera, image })
    }

    /// Loads every view of one frame.
    pub fn load_frame(&self, index: usize) -> Result<FrameViews> {
        if index >= self.frame_count() {
            return Err(Error::MissingFrame { index });
        }
        let load = |ids: &[String]| {
            ids.iter()
                .map(|id| self.load_view(index, id))
                .collect::<Result<Vec<_>>>()
        };
        Ok(FrameViews {
            index,
            train: load(&self.manifest.train)?,
            test: load(&self.manifest.test)?,
        })
    }

    /// Sequential access from frame `start` on.
    pub fn reader(&self, start: usize) -> FrameReader<'_> {
        FrameReader {
            dataset: self,
            next: start,
        }
    }

    /// Frame-0 points with colors, if the manifest names a point file.
    pub fn init_points(&self) -> Result<Option<Vec<(Vector3<f64>, Vector3<f64>)>>> {
        match &self.manifest.init_points {
            None => Ok(None),
            Some(p) => read_points(&self.root.join(p)).map(Some),
        }
    }
}

/// Hands out frames strictly in order; training code only ever sees the
/// current and earlier frames.
pub struct FrameReader<'a> {
    dataset: &'a Dataset,
    next: usize,
}

impl FrameReader<'_> {
    pub fn frame_count(&self) -> usize {
        self.dataset.frame_count()
    }

    pub fn next_index(&self) -> usize {
        self.next
    }
}

impl Iterator for FrameReader<'_> {
    type Item = Result<FrameViews>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.dataset.frame_count() {
            return None;
        }
        let f = self.dataset.load_frame(self.next);
        self.next += 1;
        Some(f)
    }
}

/// Reads `x y z r g b` lines (colors in `[0, 1]`); `#` starts a comment.
pub fn read_points(path: &Path) -> Result<Vec<(Vector3<f64>, Vector3<f64>)>> {
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Dataset(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if v.len() != 6 || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Dataset(format!(
                "{}:{}: expected six finite numbers",
                path.display(),
                n + 1
            )));
        }
        out.push((Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5])));
    }
    Ok(out)
}

pub fn write_points(path: &Path, points: &[(Vector3<f64>, Vector3<f64>)]) -> Result<()> {
    let mut s = String::from("# x y z r g b\n");
    for (p, c) in points {
        s.push_str(&format!("{} {} {} {} {} {}\n", p.x, p.y, p.z, c.x, c.y, c.z));
    }
    fs::write(path, s)?;
    Ok(())
}
