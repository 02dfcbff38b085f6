//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints one PASS/FAIL line; exits non-zero if any fails. A substring
//! argument restricts the run (`cargo test --test acceptance -- rigid`).

mod common;

use std::path::Path;
use std::time::Instant;

use common::{ntc_gradient_check, random_quat, raster_gradient_check, rigid_equivariance_max_diff, rng};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use splatstream_core::config::PipelineConfig;
use splatstream_core::gaussian::GaussianCloud;
use splatstream_core::io::stream::format_size_report;
use splatstream_core::io::{Dataset, StreamReader, StreamWriter};
use splatstream_core::ntc::WarmupOptions;
use splatstream_core::pipeline::{mean_psnr, process_frame, process_stream, train_initial, FrameOutput, Player};
use splatstream_core::quat;
use splatstream_core::raster::render;
use splatstream_core::synth::{generate, GroundTruth, SynthParams};
use splatstream_core::transform::{sh_projection, sh_rotation_matrix};
use splatstream_core::{NeuralTransformationCache, View};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// A generated scene with its frame-0 model.
struct Scene {
    dataset: Dataset,
    truth: GroundTruth,
    initial: GaussianCloud,
    warm: NeuralTransformationCache,
}

fn build_scene(params: &SynthParams, cfg: &PipelineConfig, dir: &Path) -> Scene {
    let manifest = generate(params, dir).expect("synthetic scene");
    let dataset = Dataset::load(&manifest).expect("dataset loads");
    let truth = GroundTruth::load(&dir.join("ground_truth.json")).expect("ground truth");
    let (initial, warm) = train_initial(&dataset, cfg).expect("frame 0");
    Scene {
        dataset,
        truth,
        initial,
        warm,
    }
}

struct FrameRun {
    out: FrameOutput,
    /// Means of the cloud this frame started from.
    prev_means: Vec<Vector3<f64>>,
    test_psnr: f64,
}

/// Chains frames `1..frames` from the scene's frame-0 state.
fn run_frames(scene: &Scene, cfg: &PipelineConfig, frames: usize) -> Vec<FrameRun> {
    let mut prev = scene.initial.clone();
    let mut runs = Vec::new();
    for views in scene.dataset.reader(1).take(frames - 1) {
        let views = views.expect("frame loads");
        let out = process_frame(&prev, &scene.warm, &views.train, cfg, views.index).expect("frame trains");
        let test_psnr = mean_psnr(&out.render_set(), &views.test, cfg)
            .unwrap()
            .expect("test views");
        let prev_means = std::mem::replace(&mut prev, out.transformed.clone()).means;
        runs.push(FrameRun {
            out,
            prev_means,
            test_psnr,
        });
    }
    runs
}

fn frame0_test_psnr(scene: &Scene, cfg: &PipelineConfig) -> f64 {
    let views = scene.dataset.load_frame(0).unwrap();
    mean_psnr(&scene.initial, &views.test, cfg).unwrap().unwrap()
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------------------

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let mut checked = 0;
    let mut failures = Vec::new();
    for (seed, bg) in [
        (0, Vector3::zeros()),
        (1, Vector3::zeros()),
        (17, Vector3::new(0.3, 0.5, 0.2)),
    ] {
        let c = raster_gradient_check(seed, bg);
        checked += c.checked;
        failures.extend(c.failures);
    }
    for seed in [3, 4] {
        let c = ntc_gradient_check(seed, 1e-4, 2e-2, 1e-6);
        checked += c.checked;
        failures.extend(c.failures);
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        failures.is_empty() && secs < 60.0,
        format!(
            "{checked} parameters checked, {} mismatches, {secs:.1}s{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn sh_rotation() -> Outcome {
    let identity_exact = sh_rotation_matrix(&Matrix3::identity()).unwrap().m == Matrix3::identity();
    let mut r = rng(5);
    let mut commute = 0.0f64;
    let mut homo = 0.0f64;
    for _ in 0..100 {
        let rot = quat::to_matrix(&quat::normalize(&random_quat(&mut r)).unwrap());
        let n = Vector3::new(
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        )
        .normalize();
        let m = sh_rotation_matrix(&rot).unwrap().m;
        commute = commute.max((m * sh_projection(&n) - sh_projection(&(rot * n))).norm());
        let rot2 = quat::to_matrix(&quat::normalize(&random_quat(&mut r)).unwrap());
        let m2 = sh_rotation_matrix(&rot2).unwrap().m;
        let m12 = sh_rotation_matrix(&(rot * rot2)).unwrap().m;
        homo = homo.max((m12 - m * m2).abs().max());
    }
    outcome(
        identity_exact && commute < 1e-9 && homo < 1e-6,
        format!(
            "M(I)=I exact: {identity_exact}; max commutation error {commute:.1e}; max homomorphism error {homo:.1e}"
        ),
    )
}

fn rigid_equivariance() -> Outcome {
    let worst = (0..5).map(rigid_equivariance_max_diff).fold(0.0, f64::max);
    outcome(
        worst < 2e-3,
        format!("max per-channel difference {worst:.2e} over 5 random motions"),
    )
}

fn warmup(scene: &Scene, cfg: &PipelineConfig) -> Outcome {
    let ntc = scene.warm.config.clone();
    let mut cache = NeuralTransformationCache::new(ntc, 11).unwrap();
    let means: Vec<Vector3<f64>> = scene
        .initial
        .means
        .iter()
        .copied()
        .filter(|m| cache.grid().contains(m))
        .collect();
    let opts = WarmupOptions {
        lr: cfg.ntc_lr,
        ..WarmupOptions::for_grid(cache.grid(), cfg.warmup_iterations, 5)
    };
    let (snap, losses) = cache.warmup_train(&means, &opts).unwrap();
    let last = *losses.last().unwrap();
    let out = snap.evaluate(&means).unwrap();
    let max_dmu = out.d_mu.iter().map(|d| d.amax()).fold(0.0, f64::max);
    let diag = snap.grid().extent().norm();
    outcome(
        (last + 1.0).abs() < 1e-2 && max_dmu < 1e-2 * diag,
        format!(
            "final loss {last:.5} (minimum -1); max |dμ| {max_dmu:.2e} vs bound {:.2e} after {} iterations",
            1e-2 * diag,
            cfg.warmup_iterations
        ),
    )
}

fn static_scene(scene: &Scene, runs: &[FrameRun]) -> Outcome {
    // Same "identity-like" bound as the warm-up criterion.
    let diag = scene.warm.grid().extent().norm();
    let bound = 1e-2 * diag;
    let adds: Vec<usize> = runs.iter().map(|r| r.out.stats.additional).collect();
    let dmu: Vec<f64> = runs
        .iter()
        .map(|r| {
            r.prev_means
                .iter()
                .zip(&r.out.transformed.means)
                .map(|(a, b)| (b - a).amax())
                .fold(0.0, f64::max)
        })
        .collect();
    let worst = dmu.iter().copied().fold(0.0, f64::max);
    outcome(
        adds.iter().all(|&a| a == 0) && worst < bound,
        format!(
            "{} frames; additional per frame {:?}; max |dμ| {worst:.2e} (bound {bound:.2e})",
            runs.len() + 1,
            adds
        ),
    )
}

fn rigid_scene(scene: &Scene, runs: &[FrameRun], psnr0: f64) -> Outcome {
    let labels: Vec<Option<usize>> = scene
        .initial
        .means
        .iter()
        .map(|m| scene.truth.label_point(m, 1.0))
        .collect();
    let mut errors = Vec::new();
    let mut t_norm = 0.0f64;
    for r in runs {
        let t = &scene.truth.translations[r.out.stats.frame];
        for (i, l) in labels.iter().enumerate() {
            let Some(k) = l else { continue };
            let truth = Vector3::from(t[*k]);
            t_norm = t_norm.max(truth.norm());
            errors.push((r.out.transformed.means[i] - r.prev_means[i] - truth).norm());
        }
    }
    let labelled = labels.iter().filter(|l| l.is_some()).count();
    let med = median(errors);
    let drift = runs.iter().map(|r| (r.test_psnr - psnr0).abs()).fold(0.0, f64::max);
    outcome(
        med < 0.1 * t_norm && drift <= 1.0,
        format!(
            "median displacement error {med:.2e} vs |t| {t_norm:.2e} ({:.1}%, {labelled} gaussians x {} frames); \
             held-out PSNR frame 0 {psnr0:.2} dB, max deviation {drift:.2} dB",
            100.0 * med / t_norm,
            runs.len()
        ),
    )
}

/// Stage-2 growth on the full model: at most twice per epoch, and under 5×
/// the initial spawns on the synthetic scene.
fn bounded_growth(runs: &[FrameRun], views: usize, stage2: usize) -> Outcome {
    let epochs = (stage2 / views) as u32;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for r in runs.iter().filter(|r| r.out.stats.spawned > 0) {
        let s = &r.out.stats;
        ok &= s.peak_additional <= s.spawned << epochs;
        worst = worst.max(s.peak_additional as f64 / s.spawned as f64);
    }
    outcome(
        ok && worst < 5.0,
        format!(
            "largest peak / initial spawns {worst:.2} over {epochs} epochs per frame (bound 5, hard cap 2^{epochs})"
        ),
    )
}

fn emerging_ablation(scene: &Scene, cfg: &PipelineConfig, frames: usize, at: usize) -> (Outcome, Outcome) {
    let full = run_frames(scene, cfg, frames);
    let growth = bounded_growth(&full, scene.dataset.manifest.train.len(), cfg.stage2_iterations);
    let mut base_cfg = cfg.clone();
    base_cfg.stage2_iterations = 0;
    let base = run_frames(scene, &base_cfg, frames);
    let mut noqc_cfg = cfg.clone();
    noqc_cfg.addition.quantity_control = false;
    let noqc = run_frames(scene, &noqc_cfg, frames);
    let post = |runs: &[FrameRun]| -> Vec<(f64, usize)> {
        runs.iter()
            .filter(|r| r.out.stats.frame >= at)
            .map(|r| (r.test_psnr, r.out.stats.additional))
            .collect()
    };
    let (f, b, n) = (post(&full), post(&base), post(&noqc));
    let psnr = |v: &[(f64, usize)]| mean(v.iter().map(|x| x.0));
    let count = |v: &[(f64, usize)]| mean(v.iter().map(|x| x.1 as f64));
    let gain = psnr(&f) - psnr(&b);
    let ratio = count(&n) / count(&f).max(1e-9);
    let noqc_gain = psnr(&n) - psnr(&f);
    let ablation = outcome(
        gain >= 3.0 && ratio >= 3.0 && noqc_gain <= 0.2,
        format!(
            "post-emergence held-out PSNR: full {:.2} dB, stage-1 only {:.2} dB (gain {gain:+.2}), \
             no quantity control {:.2} dB ({noqc_gain:+.2}); mean additional full {:.1} vs no QC {:.1} ({ratio:.1}x)",
            psnr(&f),
            psnr(&b),
            psnr(&n),
            count(&f),
            count(&n)
        ),
    );
    (ablation, growth)
}

/// Trains a short stream by hand (keeping every render set), writes it, and
/// also runs `process_stream` on the same data.
struct StreamRuns {
    manual: Vec<u8>,
    piped: Vec<u8>,
    piped_again: Vec<u8>,
    render_sets: Vec<GaussianCloud>,
    views: Vec<Vec<View>>,
    cfg: PipelineConfig,
}

fn stream_runs(dir: &Path) -> StreamRuns {
    let cfg = PipelineConfig::desk();
    let params = SynthParams::emerging_scene(5, 3);
    let manifest = generate(&params, dir).unwrap();
    let dataset = Dataset::load(&manifest).unwrap();
    let (initial, warm) = train_initial(&dataset, &cfg).unwrap();
    let info = splatstream_core::io::SceneInfo {
        background: cfg.render.background,
        raster: cfg.render.raster.clone(),
        rotate_sh: cfg.rotate_sh,
        cameras: dataset.manifest.cameras.clone(),
    };
    let mut writer = StreamWriter::new(Vec::new(), &info, &warm, &initial).unwrap();
    let mut render_sets = vec![initial.clone()];
    let mut views = vec![];
    let mut prev = initial;
    for (i, v) in dataset.reader(0).enumerate() {
        let v = v.unwrap();
        let all: Vec<View> = v.train.iter().chain(&v.test).cloned().collect();
        views.push(all);
        if i == 0 {
            continue;
        }
        let out = process_frame(&prev, &warm, &v.train, &cfg, i).unwrap();
        writer.write_frame(&out.record).unwrap();
        render_sets.push(out.render_set());
        prev = out.transformed;
    }
    let manual = writer.into_inner();
    let piped = {
        let mut out = Vec::new();
        process_stream(&dataset, &cfg, &mut out, &mut |_| {}).unwrap();
        out
    };
    let piped_again = {
        let mut out = Vec::new();
        process_stream(&dataset, &cfg, &mut out, &mut |_| {}).unwrap();
        out
    };
    StreamRuns {
        manual,
        piped,
        piped_again,
        render_sets,
        views,
        cfg,
    }
}

fn storage(runs: &StreamRuns) -> Outcome {
    let reader = StreamReader::from_bytes(&runs.piped).unwrap();
    let rows = reader.size_rows();
    let blob = reader.warmup.blob_size();
    let mut ok = true;
    let mut sum = reader.preamble_bytes;
    for (r, rec) in rows.iter().zip(&reader.frames) {
        ok &= r.total_bytes == r.ntc_bytes + r.additional_bytes + r.overhead_bytes;
        ok &= r.ntc_bytes == blob && r.ntc_bytes == rec.ntc_blob.len();
        ok &= r.additional_bytes == 92 * rec.additional.len();
        ok &= r.overhead_bytes == rows[0].overhead_bytes;
        sum += r.total_bytes;
    }
    ok &= sum == runs.piped.len();
    let report = format_size_report(&rows);
    ok &= report.contains("NTC (KB)") && report.contains("New 3DGs (KB)") && report.contains("Total (KB)");
    let adds: Vec<usize> = rows.iter().map(|r| r.additional_count).collect();
    outcome(
        ok,
        format!(
            "{} frame rows; ntc {} B + 92 B x additional {:?} + {} B overhead; preamble {} B + rows = {} B file",
            rows.len(),
            blob,
            adds,
            rows.first().map(|r| r.overhead_bytes).unwrap_or(0),
            reader.preamble_bytes,
            runs.piped.len()
        ),
    )
}

fn determinism(runs: &StreamRuns) -> Outcome {
    let same_seed = runs.piped == runs.piped_again;
    let same_as_manual = runs.piped == runs.manual;
    let reader = StreamReader::from_bytes(&runs.piped).unwrap();
    let mut player = Player::new(&reader).unwrap();
    let bg = runs.cfg.render.background();
    let mut compared = 0;
    let mut mismatched = 0;
    for (i, set) in runs.render_sets.iter().enumerate() {
        for v in &runs.views[i] {
            let trained = render(set, &v.camera, bg, &runs.cfg.render.raster);
            let replayed = player.render(i, &v.camera).unwrap();
            compared += 1;
            if trained.data != replayed.data {
                mismatched += 1;
            }
        }
    }
    outcome(
        same_seed && same_as_manual && mismatched == 0,
        format!(
            "repeat run bit-identical: {same_seed}; matches hand-chained frames: {same_as_manual}; \
             replay mismatches {mismatched}/{compared} images ({} bytes)",
            runs.piped.len()
        ),
    )
}

fn monotonicity(scene: &Scene, cfg: &PipelineConfig, short: &[FrameRun], frames: usize) -> Outcome {
    let mut long_cfg = cfg.clone();
    long_cfg.stage1_iterations = 250;
    let long = run_frames(scene, &long_cfg, frames);
    let a = mean(short.iter().take(frames - 1).map(|r| r.test_psnr));
    let b = mean(long.iter().map(|r| r.test_psnr));
    outcome(
        b >= a,
        format!(
            "mean held-out PSNR over {} rigid-scene frames: 150 iterations {a:.3} dB, 250 iterations {b:.3} dB",
            frames - 1
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |key: &str| filter.is_empty() || filter.iter().any(|f| key.contains(f.as_str()));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::desk();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |key: &'static str, o: Outcome| {
        println!("[{}] {key}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((key, o));
    };

    if wanted("gradient-suite") {
        record("gradient-suite", gradient_suite());
    }
    if wanted("sh-rotation") {
        record("sh-rotation", sh_rotation());
    }
    if wanted("rigid-equivariance") {
        record("rigid-equivariance", rigid_equivariance());
    }
    if wanted("warm-up") || wanted("static-scene") {
        let scene = build_scene(&SynthParams::static_scene(20), &cfg, &tmp.path().join("static"));
        if wanted("warm-up") {
            record("warm-up", warmup(&scene, &cfg));
        }
        if wanted("static-scene") {
            let runs = run_frames(&scene, &cfg, 20);
            record("static-scene", static_scene(&scene, &runs));
        }
    }
    if wanted("rigid-scene") || wanted("iteration-monotonicity") {
        let scene = build_scene(
            &SynthParams::rigid_scene(20, [0.02, 0.0, 0.01]),
            &cfg,
            &tmp.path().join("rigid"),
        );
        let runs = run_frames(&scene, &cfg, 20);
        if wanted("rigid-scene") {
            record(
                "rigid-scene",
                rigid_scene(&scene, &runs, frame0_test_psnr(&scene, &cfg)),
            );
        }
        if wanted("iteration-monotonicity") {
            record("iteration-monotonicity", monotonicity(&scene, &cfg, &runs, 8));
        }
    }
    if wanted("emerging-ablation") {
        let (frames, at) = (10, 4);
        let scene = build_scene(
            &SynthParams::emerging_scene(frames, at),
            &cfg,
            &tmp.path().join("emerging"),
        );
        let (ablation, growth) = emerging_ablation(&scene, &cfg, frames, at);
        record("emerging-ablation", ablation);
        record("bounded-growth (invariant)", growth);
    }
    if wanted("storage-accounting") || wanted("determinism") {
        let runs = stream_runs(&tmp.path().join("stream"));
        if wanted("storage-accounting") {
            record("storage-accounting", storage(&runs));
        }
        if wanted("determinism") {
            record("determinism", determinism(&runs));
        }
    }

    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
