use std::io::Write;
use std::time::Instant;

use nalgebra::Vector3;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::io::{Dataset, FrameRecord, SceneInfo, SizeRow, StreamReader, StreamWriter};
use crate::metrics::psnr;
use crate::ntc::{NeuralTransformationCache, WarmupOptions};
use crate::raster::render;
use crate::view::View;

use super::derive_seed;
use super::frame::{process_frame, FrameStats};
use super::frame0::{init_cloud_from_points, train_frame0};
use super::playback::Player;

/// Progress report for one emitted frame.
#[derive(Debug, Clone)]
pub struct FrameEvent {
    pub frame: usize,
    pub gaussians: usize,
    pub stats: FrameStats,
    /// `None` for frame 0, which is stored in the preamble.
    pub size: Option<SizeRow>,
    pub train_psnr: f64,
    pub test_psnr: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct StreamSummary {
    pub frames: usize,
    pub bytes: usize,
    pub preamble_bytes: usize,
}

/// Bounding box of the means, padded by `margin × size` on each side.
pub fn fit_aabb(cloud: &GaussianCloud, margin: f64) -> ([f64; 3], [f64; 3]) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for m in &cloud.means {
        lo = lo.inf(m);
        hi = hi.sup(m);
    }
    if cloud.is_empty() {
        return ([-1.0; 3], [1.0; 3]);
    }
    let pad = (hi - lo).map(|d| (d * margin).max(1e-3));
    ((lo - pad).into(), (hi + pad).into())
}

/// Mean PSNR of `cloud` over `views`; `None` without views.
pub fn mean_psnr(cloud: &GaussianCloud, views: &[View], cfg: &PipelineConfig) -> Result<Option<f64>> {
    if views.is_empty() {
        return Ok(None);
    }
    let mut s = 0.0;
    for v in views {
        let img = render(cloud, &v.camera, cfg.render.background(), &cfg.render.raster);
        s += psnr(&img, &v.image)?;
    }
    Ok(Some(s / views.len() as f64))
}

fn scene_info(dataset: &Dataset, cfg: &PipelineConfig) -> SceneInfo {
    SceneInfo {
        background: cfg.render.background,
        raster: cfg.render.raster.clone(),
        rotate_sh: cfg.rotate_sh,
        cameras: dataset.manifest.cameras.clone(),
    }
}

/// Frame 0: initial cloud from the dataset's point set, trained and rounded
/// to f32, plus the warmed-up cache every later frame starts from.
pub fn train_initial(dataset: &Dataset, cfg: &PipelineConfig) -> Result<(GaussianCloud, NeuralTransformationCache)> {
    let views = dataset.load_frame(0)?;
    let points = dataset
        .init_points()?
        .ok_or_else(|| Error::Dataset("dataset names no initial point set".into()))?;
    let init = init_cloud_from_points(&points, cfg.frame0.init_opacity);
    let (mut initial, _) = train_frame0(&views.train, init, cfg)?;
    initial.quantize_f32();
    if initial.is_empty() {
        return Err(Error::Dataset("frame-0 training removed every gaussian".into()));
    }
    let (lo, hi) = match (cfg.ntc.aabb_min, cfg.ntc.aabb_max, dataset.manifest.aabb) {
        (Some(lo), Some(hi), _) => (lo, hi),
        (_, _, Some([lo, hi])) => (lo, hi),
        _ => fit_aabb(&initial, cfg.ntc.aabb_margin),
    };
    let ntc_cfg = cfg.ntc.build(lo, hi)?;
    let mut cache = NeuralTransformationCache::new(ntc_cfg, derive_seed(cfg.seed, 0, 3))?;
    cache.quantize_f32();
    let inside: Vec<Vector3<f64>> = initial
        .means
        .iter()
        .copied()
        .filter(|m| cache.grid().contains(m))
        .collect();
    let mut warm = if inside.is_empty() || cfg.warmup_iterations == 0 {
        cache.snapshot()
    } else {
        let opts = WarmupOptions {
            lr: cfg.ntc_lr,
            adam: cfg.adam,
            ..WarmupOptions::for_grid(cache.grid(), cfg.warmup_iterations, derive_seed(cfg.seed, 0, 4))
        };
        cache.warmup_train(&inside, &opts)?.0
    };
    // the stream stores f32; a resumed run must start from the same values
    warm.quantize_f32();
    Ok((initial, warm))
}

fn prepare_start(
    dataset: &Dataset,
    cfg: &PipelineConfig,
    on_frame: &mut dyn FnMut(&FrameEvent),
) -> Result<(GaussianCloud, NeuralTransformationCache)> {
    let t = Instant::now();
    let (initial, warm) = train_initial(dataset, cfg)?;
    let views = dataset.load_frame(0)?;
    on_frame(&FrameEvent {
        frame: 0,
        gaussians: initial.len(),
        stats: FrameStats::default(),
        size: None,
        train_psnr: mean_psnr(&initial, &views.train, cfg)?.unwrap_or(f64::NAN),
        test_psnr: mean_psnr(&initial, &views.test, cfg)?,
        seconds: t.elapsed().as_secs_f64(),
    });
    Ok((initial, warm))
}

fn run_frames<W: Write>(
    dataset: &Dataset,
    cfg: &PipelineConfig,
    writer: &mut StreamWriter<W>,
    mut prev: GaussianCloud,
    warm: &NeuralTransformationCache,
    start: usize,
    on_frame: &mut dyn FnMut(&FrameEvent),
) -> Result<usize> {
    let mut frames = 0;
    for views in dataset.reader(start) {
        let t = Instant::now();
        let views = views?;
        let out = process_frame(&prev, warm, &views.train, cfg, views.index)?;
        let size = writer.write_frame(&out.record)?;
        let set = out.render_set();
        on_frame(&FrameEvent {
            frame: views.index,
            gaussians: set.len(),
            size: Some(size),
            train_psnr: mean_psnr(&set, &views.train, cfg)?.unwrap_or(f64::NAN),
            test_psnr: mean_psnr(&set, &views.test, cfg)?,
            stats: out.stats,
            seconds: t.elapsed().as_secs_f64(),
        });
        // only the transformed cloud moves on
        prev = out.transformed;
        frames += 1;
    }
    Ok(frames)
}

/// Runs the whole dataset and writes the stream to `out`, flushing each
/// frame as soon as it is produced.
pub fn process_stream<W: Write>(
    dataset: &Dataset,
    cfg: &PipelineConfig,
    out: W,
    on_frame: &mut dyn FnMut(&FrameEvent),
) -> Result<StreamSummary> {
    cfg.validate()?;
    let (initial, warm) = prepare_start(dataset, cfg, on_frame)?;
    let mut writer = StreamWriter::new(out, &scene_info(dataset, cfg), &warm, &initial)?;
    let preamble_bytes = writer.bytes_written();
    let frames = run_frames(dataset, cfg, &mut writer, initial, &warm, 1, on_frame)?;
    Ok(StreamSummary {
        frames: frames + 1,
        bytes: writer.bytes_written(),
        preamble_bytes,
    })
}

/// Continues an interrupted run: keeps frames `0..=keep_through` of
/// `existing`, rebuilds the carried-forward cloud from them, and trains the
/// remaining frames.
pub fn resume_stream<W: Write>(
    dataset: &Dataset,
    cfg: &PipelineConfig,
    existing: &StreamReader,
    keep_through: usize,
    out: W,
    on_frame: &mut dyn FnMut(&FrameEvent),
) -> Result<StreamSummary> {
    cfg.validate()?;
    if keep_through >= existing.frame_count() {
        return Err(Error::FrameOutOfRange {
            index: keep_through,
            count: existing.frame_count(),
        });
    }
    let mut writer = StreamWriter::new(out, &existing.info, &existing.warmup, &existing.initial)?;
    let preamble_bytes = writer.bytes_written();
    let kept: &[FrameRecord] = &existing.frames[..keep_through];
    for r in kept {
        writer.write_frame(r)?;
    }
    let prev = Player::new(existing)?.transformed(keep_through)?.clone();
    let frames = run_frames(
        dataset,
        cfg,
        &mut writer,
        prev,
        &existing.warmup,
        keep_through + 1,
        on_frame,
    )?;
    Ok(StreamSummary {
        frames: keep_through + 1 + frames,
        bytes: writer.bytes_written(),
        preamble_bytes,
    })
}
