//! Synthetic multi-view video scenes with known ground truth: clusters of
//! Gaussians ("objects") that translate on a script, optional blobs that
//! appear at a given frame, and a ring of cameras looking at the origin.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{logit, rgb_to_sh_dc, Gaussian, GaussianCloud};
use crate::io::dataset::{write_points, CameraSpec, DatasetManifest, FrameEntry, MANIFEST_VERSION};
use crate::io::png::write_png;
use crate::pipeline::fit_aabb;
use crate::quat;
use crate::raster::{render, RasterConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub center: [f64; 3],
    pub radius: f64,
    pub color: [f64; 3],
    pub gaussians: usize,
    /// Translation applied between consecutive frames.
    #[serde(default)]
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmergingSpec {
    /// First frame in which the blob is visible.
    pub frame: usize,
    pub center: [f64; 3],
    pub radius: f64,
    pub color: [f64; 3],
    pub gaussians: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub seed: u64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
    pub cameras: usize,
    /// Every `test_stride`-th camera is held out (0 = no test views).
    pub test_stride: usize,
    pub ring_radius: f64,
    /// Cameras alternate between ±this elevation, in degrees.
    pub elevation_deg: f64,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub emerging: Vec<EmergingSpec>,
    /// Jitter of the initial points, as a fraction of the object radius.
    pub point_jitter: f64,
    /// Fraction of ground-truth means kept in the initial point set.
    pub point_keep: f64,
    pub background: [f64; 3],
}

impl SynthParams {
    fn base(frames: usize) -> Self {
        SynthParams {
            seed: 0,
            frames,
            width: 64,
            height: 64,
            focal: 80.0,
            cameras: 20,
            test_stride: 5,
            ring_radius: 4.0,
            elevation_deg: 20.0,
            objects: vec![
                ObjectSpec {
                    center: [-0.45, 0.1, -0.2],
                    radius: 0.35,
                    color: [0.85, 0.25, 0.2],
                    gaussians: 40,
                    velocity: [0.0; 3],
                },
                ObjectSpec {
                    center: [0.4, -0.15, 0.25],
                    radius: 0.3,
                    color: [0.2, 0.45, 0.85],
                    gaussians: 40,
                    velocity: [0.0; 3],
                },
                ObjectSpec {
                    center: [0.05, 0.35, 0.45],
                    radius: 0.25,
                    color: [0.3, 0.8, 0.3],
                    gaussians: 30,
                    velocity: [0.0; 3],
                },
            ],
            emerging: Vec::new(),
            point_jitter: 0.05,
            point_keep: 0.8,
            background: [0.0; 3],
        }
    }

    /// Nothing moves, nothing appears.
    pub fn static_scene(frames: usize) -> Self {
        Self::base(frames)
    }

    /// Every object shifts by `t` per frame.
    pub fn rigid_scene(frames: usize, t: [f64; 3]) -> Self {
        let mut p = Self::base(frames);
        for o in &mut p.objects {
            o.velocity = t;
        }
        p
    }

    /// Static objects plus a bright blob appearing at frame `at`.
    pub fn emerging_scene(frames: usize, at: usize) -> Self {
        let mut p = Self::base(frames);
        p.emerging.push(EmergingSpec {
            frame: at,
            center: [0.0, -0.3, -0.35],
            radius: 0.22,
            color: [0.95, 0.9, 0.3],
            gaussians: 24,
        });
        p
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic scene: {m}")));
        if self.frames == 0 {
            return bad("frames must be positive");
        }
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0) {
            return bad("image size and focal length must be positive");
        }
        if self.cameras < 2 {
            return bad("need at least two cameras");
        }
        if self.test_stride == 1 {
            return bad("test_stride 1 would hold out every camera");
        }
        if self.objects.is_empty() || self.objects.iter().any(|o| o.gaussians == 0 || !(o.radius > 0.0)) {
            return bad("need at least one object, each with gaussians and a positive radius");
        }
        if self
            .emerging
            .iter()
            .any(|e| e.frame == 0 || e.frame >= self.frames || e.gaussians == 0)
        {
            return bad("emerging blobs must appear at a frame in 1..frames and have gaussians");
        }
        if !(self.point_keep > 0.0 && self.point_keep <= 1.0) || !(self.point_jitter >= 0.0) {
            return bad("point_keep must be in (0, 1] and point_jitter non-negative");
        }
        if !(self.ring_radius > 0.0) {
            return bad("ring_radius must be positive");
        }
        Ok(())
    }
}

/// Ground truth written next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frames: usize,
    /// Per-frame translation of each object relative to the previous frame
    /// (`[frame][object]`; frame 0 is zero).
    pub translations: Vec<Vec<[f64; 3]>>,
    /// Object index of every ground-truth Gaussian at frame 0.
    pub labels: Vec<usize>,
    pub objects: Vec<ObjectSpec>,
    pub emerging: Vec<EmergingSpec>,
}

impl GroundTruth {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Object whose frame-0 ball (inflated by `slack`) contains `p`, nearest
    /// center first.
    pub fn label_point(&self, p: &Vector3<f64>, slack: f64) -> Option<usize> {
        self.objects
            .iter()
            .enumerate()
            .map(|(i, o)| (i, (p - Vector3::from(o.center)).norm() / o.radius))
            .filter(|&(_, d)| d <= slack)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }
}

/// A generated scene held in memory.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub params: SynthParams,
    pub cameras: Vec<(String, Camera)>,
    pub train: Vec<String>,
    pub test: Vec<String>,
    /// Frame-0 cloud of the scripted objects.
    pub objects: GaussianCloud,
    pub labels: Vec<usize>,
    pub blobs: Vec<GaussianCloud>,
    pub points: Vec<(Vector3<f64>, Vector3<f64>)>,
}

fn cluster(
    rng: &mut ChaCha8Rng,
    center: Vector3<f64>,
    radius: f64,
    color: Vector3<f64>,
    n: usize,
    out: &mut GaussianCloud,
) {
    let tint = Normal::new(0.0, 0.04).unwrap();
    for _ in 0..n {
        // uniform in the ball, shrunk so splats stay inside it
        let dir: [f64; 3] = UnitSphere.sample(rng);
        let r = 0.75 * radius * rng.random::<f64>().cbrt();
        let mean = center + Vector3::from(dir) * r;
        let base = (0.28 * radius).ln();
        let log_scale = Vector3::from_fn(|_, _| base + rng.random_range(-0.35..0.35));
        let axis: [f64; 3] = UnitSphere.sample(rng);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let (s, c) = (0.5 * angle).sin_cos();
        let rotation = [c, s * axis[0], s * axis[1], s * axis[2]];
        let rgb = color.map(|v| (v + tint.sample(rng)).clamp(0.02, 0.98));
        let mut sh = [Vector3::zeros(); 4];
        sh[0] = rgb_to_sh_dc(&rgb);
        out.push(Gaussian {
            mean,
            rotation: quat::normalize(&rotation).expect("unit axis"),
            log_scale,
            opacity_logit: logit(rng.random_range(0.75..0.95)),
            sh,
        });
    }
}

impl SynthScene {
    pub fn new(params: &SynthParams) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut cameras = Vec::new();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for i in 0..params.cameras {
            let az = std::f64::consts::TAU * i as f64 / params.cameras as f64;
            let el = params.elevation_deg.to_radians() * if i % 2 == 0 { 1.0 } else { -1.0 };
            let eye = params.ring_radius * Vector3::new(el.cos() * az.cos(), -el.sin(), el.cos() * az.sin());
            let mut cam = Camera::look_at(
                params.width,
                params.height,
                params.focal,
                eye,
                Vector3::zeros(),
                Vector3::new(0.0, -1.0, 0.0),
            )?;
            cam.cx = params.width as f64 / 2.0;
            cam.cy = params.height as f64 / 2.0;
            let id = format!("cam{i:02}");
            if params.test_stride > 0 && i % params.test_stride == params.test_stride - 1 {
                test.push(id.clone());
            } else {
                train.push(id.clone());
            }
            cameras.push((id, cam));
        }

        let mut objects = GaussianCloud::new();
        let mut labels = Vec::new();
        for (k, o) in params.objects.iter().enumerate() {
            cluster(
                &mut rng,
                o.center.into(),
                o.radius,
                o.color.into(),
                o.gaussians,
                &mut objects,
            );
            labels.extend(std::iter::repeat_n(k, o.gaussians));
        }
        let blobs = params
            .emerging
            .iter()
            .map(|e| {
                let mut c = GaussianCloud::new();
                cluster(&mut rng, e.center.into(), e.radius, e.color.into(), e.gaussians, &mut c);
                c
            })
            .collect();

        let jitter = Normal::new(0.0, 1.0).unwrap();
        let mut points = Vec::new();
        for (i, m) in objects.means.iter().enumerate() {
            if rng.random::<f64>() >= params.point_keep {
                continue;
            }
            let o = &params.objects[labels[i]];
            let p = m + Vector3::from_fn(|_, _| jitter.sample(&mut rng)) * (params.point_jitter * o.radius);
            points.push((p, Vector3::from(o.color)));
        }
        if points.is_empty() {
            return Err(Error::Config(
                "synthetic scene: point subsampling kept no points".into(),
            ));
        }

        Ok(SynthScene {
            params: params.clone(),
            cameras,
            train,
            test,
            objects,
            labels,
            blobs,
            points,
        })
    }

    /// Cumulative offset of object `k` at frame `t`.
    pub fn offset(&self, k: usize, t: usize) -> Vector3<f64> {
        Vector3::from(self.params.objects[k].velocity) * t as f64
    }

    /// Everything visible at frame `t`.
    pub fn frame_cloud(&self, t: usize) -> GaussianCloud {
        let mut c = self.objects.clone();
        for (i, m) in c.means.iter_mut().enumerate() {
            *m += self.offset(self.labels[i], t);
        }
        for (e, blob) in self.params.emerging.iter().zip(&self.blobs) {
            if t >= e.frame {
                c.extend(blob);
            }
        }
        c
    }

    /// Box around every ground-truth mean over the whole sequence (motion is
    /// linear, so the first and last frames bound it), padded by a quarter
    /// of its size per side.
    pub fn aabb(&self) -> [[f64; 3]; 2] {
        let last = self.params.frames.saturating_sub(1);
        let (lo, hi) = fit_aabb(&self.frame_cloud(0).union(&self.frame_cloud(last)), 0.25);
        [lo, hi]
    }

    pub fn camera(&self, id: &str) -> Option<&Camera> {
        self.cameras.iter().find(|(i, _)| i == id).map(|(_, c)| c)
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let p = &self.params;
        let translations = (0..p.frames)
            .map(|t| {
                p.objects
                    .iter()
                    .map(|o| if t == 0 { [0.0; 3] } else { o.velocity })
                    .collect()
            })
            .collect();
        GroundTruth {
            frames: p.frames,
            translations,
            labels: self.labels.clone(),
            objects: p.objects.clone(),
            emerging: p.emerging.clone(),
        }
    }

    /// Renders every camera at every frame and writes `manifest.json`,
    /// `points.txt`, `ground_truth.json` and `frames/NNNN/<cam>.png` under
    /// `dir`. Returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<std::path::PathBuf> {
        let p = &self.params;
        let raster = RasterConfig::default();
        let bg = Vector3::from(p.background);
        let mut frames = Vec::with_capacity(p.frames);
        for t in 0..p.frames {
            let cloud = self.frame_cloud(t);
            let rel = format!("frames/{t:04}");
            fs::create_dir_all(dir.join(&rel))?;
            let mut entry = FrameEntry {
                images: Default::default(),
            };
            for (id, cam) in &self.cameras {
                let img = render(&cloud, cam, bg, &raster);
                let file = format!("{rel}/{id}.png");
                write_png(&dir.join(&file), &img)?;
                entry.images.insert(id.clone(), file);
            }
            frames.push(entry);
        }
        write_points(&dir.join("points.txt"), &self.points)?;
        fs::write(
            dir.join("ground_truth.json"),
            serde_json::to_string_pretty(&self.ground_truth())?,
        )?;
        let manifest = DatasetManifest {
            version: MANIFEST_VERSION,
            cameras: self
                .cameras
                .iter()
                .map(|(id, c)| CameraSpec::from_camera(id.clone(), c))
                .collect(),
            train: self.train.clone(),
            test: self.test.clone(),
            frames,
            init_points: Some("points.txt".into()),
            background: Some(p.background),
            aabb: Some(self.aabb()),
        };
        let path = dir.join("manifest.json");
        manifest.write(&path)?;
        Ok(path)
    }
}

/// Builds and writes a scene in one go.
pub fn generate(params: &SynthParams, dir: &Path) -> Result<std::path::PathBuf> {
    fs::create_dir_all(dir)?;
    SynthScene::new(params)?.write(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_split_cameras() {
        let s = SynthScene::new(&SynthParams::emerging_scene(6, 3)).unwrap();
        assert_eq!(s.train.len(), 16);
        assert_eq!(s.test, ["cam04", "cam09", "cam14", "cam19"]);
        assert_eq!(s.frame_cloud(2).len(), s.objects.len());
        assert_eq!(s.frame_cloud(3).len(), s.objects.len() + 24);
    }

    #[test]
    fn rigid_offsets_accumulate() {
        let s = SynthScene::new(&SynthParams::rigid_scene(5, [0.02, 0.0, 0.01])).unwrap();
        let d = s.frame_cloud(4).means[7] - s.objects.means[7];
        assert!((d - Vector3::new(0.08, 0.0, 0.04)).norm() < 1e-12);
        let gt = s.ground_truth();
        assert_eq!(gt.translations[0][0], [0.0; 3]);
        assert_eq!(gt.translations[3][1], [0.02, 0.0, 0.01]);
    }

    #[test]
    fn labels_follow_objects() {
        let s = SynthScene::new(&SynthParams::static_scene(1)).unwrap();
        let gt = s.ground_truth();
        for (i, m) in s.objects.means.iter().enumerate() {
            assert_eq!(gt.label_point(m, 1.0), Some(s.labels[i]));
        }
        assert_eq!(gt.label_point(&Vector3::new(5.0, 5.0, 5.0), 1.5), None);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = SynthParams::static_scene(3);
        p.emerging.push(EmergingSpec {
            frame: 3,
            center: [0.0; 3],
            radius: 0.1,
            color: [1.0; 3],
            gaussians: 4,
        });
        assert!(SynthScene::new(&p).is_err());
        let mut p = SynthParams::static_scene(3);
        p.cameras = 1;
        assert!(SynthScene::new(&p).is_err());
    }
}
