//! Shared fixtures for the benchmarks: a synthetic scene rendered at a
//! chosen resolution.

use splatstream_core::config::PipelineConfig;
use splatstream_core::gaussian::GaussianCloud;
use splatstream_core::ntc::NeuralTransformationCache;
use splatstream_core::raster::render;
use splatstream_core::synth::{SynthParams, SynthScene};
use splatstream_core::View;

pub struct Fixture {
    pub cloud: GaussianCloud,
    /// Training views of the next frame, where the blob has appeared.
    pub views: Vec<View>,
    pub cache: NeuralTransformationCache,
    pub cfg: PipelineConfig,
}

pub fn fixture(size: usize) -> Fixture {
    let mut p = SynthParams::emerging_scene(2, 1);
    p.focal *= size as f64 / p.width as f64;
    p.width = size;
    p.height = size;
    let scene = SynthScene::new(&p).expect("valid scene");
    let cloud = scene.frame_cloud(0);
    let next = scene.frame_cloud(1);
    let mut cfg = PipelineConfig::desk();
    cfg.stage1_iterations = 20;
    cfg.stage2_iterations = 16;
    let views = scene
        .train
        .iter()
        .map(|id| {
            let camera = scene.camera(id).expect("camera").clone();
            let image = render(&next, &camera, cfg.render.background(), &cfg.render.raster);
            View { camera, image }
        })
        .collect();
    let [lo, hi] = scene.aabb();
    let cache = NeuralTransformationCache::new(cfg.ntc.build(lo, hi).expect("valid grid"), 7).expect("valid cache");
    Fixture {
        cloud,
        views,
        cache,
        cfg,
    }
}
