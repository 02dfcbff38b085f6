use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use splatstream_core::io::stream::format_size_report;
use splatstream_core::io::{export_viewer_bundle, Dataset, SizeRow, StreamReader};
use splatstream_core::metrics::psnr;
use splatstream_core::pipeline::{process_stream, resume_stream, FrameEvent, Player};
use splatstream_core::synth::{generate, SynthParams};
use splatstream_core::PipelineConfig;

use crate::{ConfigArgs, EvalArgs, ExportArgs, Failure, SceneKind, SizeArgs, Split, StreamArgs, SynthArgs};

pub fn synth(a: &SynthArgs, seed: Option<u64>) -> Result<(), Failure> {
    if a.translate.len() != 3 {
        return Err(Failure::Usage(format!(
            "--translate takes x,y,z; got {} values",
            a.translate.len()
        )));
    }
    let mut p = match a.scene {
        SceneKind::Static => SynthParams::static_scene(a.frames),
        SceneKind::Rigid => SynthParams::rigid_scene(a.frames, [a.translate[0], a.translate[1], a.translate[2]]),
        SceneKind::Emerging => SynthParams::emerging_scene(a.frames, a.emerge_at.unwrap_or(a.frames / 2)),
    };
    if let Some(s) = seed {
        p.seed = s;
    }
    if let Some(c) = a.cameras {
        p.cameras = c;
        // keep at least one training camera
        p.test_stride = p.test_stride.min(c.max(2));
    }
    if let Some(w) = a.width {
        p.focal *= w as f64 / p.width as f64;
        p.width = w;
    }
    if let Some(h) = a.height {
        p.height = h;
    }
    if let Some(k) = a.gaussians {
        if k == 0 {
            return Err(Failure::Usage("--gaussians must be positive".into()));
        }
        p.objects.truncate(k);
        let n = p.objects.len();
        for (i, o) in p.objects.iter_mut().enumerate() {
            o.gaussians = k / n + usize::from(i < k % n);
        }
    }
    let manifest = generate(&p, &a.out)?;
    eprintln!(
        "wrote {} frames x {} cameras to {}",
        p.frames,
        p.cameras,
        manifest.display()
    );
    Ok(())
}

/// One line of the stream log. Sizes are empty for frame 0, which lives in
/// the stream preamble; the wall-clock columns appear only with `--timings`.
#[derive(Serialize)]
struct LogRow {
    frame: usize,
    gaussians: usize,
    additional: usize,
    selected: usize,
    spawned: usize,
    split: usize,
    pruned: usize,
    stage1_first_loss: Option<f64>,
    stage1_last_loss: Option<f64>,
    stage2_last_loss: Option<f64>,
    train_psnr: f64,
    test_psnr: Option<f64>,
    ntc_kb: Option<f64>,
    new_3dgs_kb: Option<f64>,
    overhead_kb: Option<f64>,
    total_kb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage1_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage2_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seconds: Option<f64>,
}

fn kb(b: usize) -> f64 {
    b as f64 / 1024.0
}

fn log_row(e: &FrameEvent, timings: bool) -> LogRow {
    let s = &e.stats;
    let t = |v: f64| timings.then_some(v);
    LogRow {
        frame: e.frame,
        gaussians: e.gaussians,
        additional: s.additional,
        selected: s.selected,
        spawned: s.spawned,
        split: s.split,
        pruned: s.pruned,
        stage1_first_loss: s.stage1_first_loss,
        stage1_last_loss: s.stage1_last_loss,
        stage2_last_loss: s.stage2_last_loss,
        train_psnr: e.train_psnr,
        test_psnr: e.test_psnr,
        ntc_kb: e.size.map(|r| kb(r.ntc_bytes)),
        new_3dgs_kb: e.size.map(|r| kb(r.additional_bytes)),
        overhead_kb: e.size.map(|r| kb(r.overhead_bytes)),
        total_kb: e.size.map(|r| kb(r.total_bytes)),
        stage1_seconds: t(s.stage1_seconds),
        stage2_seconds: t(s.stage2_seconds),
        seconds: t(e.seconds),
    }
}

pub fn stream(a: &StreamArgs, cfg: &PipelineConfig) -> Result<(), Failure> {
    let dataset = Dataset::load(&a.dataset)?;
    // read before the output is truncated, in case both name the same file
    let existing = a.resume.as_deref().map(StreamReader::open).transpose()?;
    let out = BufWriter::new(File::create(&a.out)?);
    let mut log = a.log.as_ref().map(csv::Writer::from_path).transpose()?;
    let mut log_err = None;
    let mut on_frame = |e: &FrameEvent| {
        eprintln!(
            "frame {:>4}: {} gaussians ({} new), train {:.2} dB{}, {:.2}s",
            e.frame,
            e.gaussians,
            e.stats.additional,
            e.train_psnr,
            e.test_psnr.map(|p| format!(", test {p:.2} dB")).unwrap_or_default(),
            e.seconds
        );
        if let Some(w) = log.as_mut() {
            if let Err(err) = w
                .serialize(log_row(e, a.timings))
                .and_then(|_| w.flush().map_err(Into::into))
            {
                log_err.get_or_insert(err);
            }
        }
    };
    let summary = match (&existing, a.keep_through) {
        (Some(s), Some(k)) => resume_stream(&dataset, cfg, s, k, out, &mut on_frame)?,
        _ => process_stream(&dataset, cfg, out, &mut on_frame)?,
    };
    if let Some(e) = log_err {
        return Err(e.into());
    }
    eprintln!(
        "{} frames, {} bytes ({} preamble) -> {}",
        summary.frames,
        summary.bytes,
        summary.preamble_bytes,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    frame: usize,
    views: usize,
    psnr: f64,
}

pub fn eval(a: &EvalArgs) -> Result<(), Failure> {
    let stream = StreamReader::open(&a.stream)?;
    let dataset = Dataset::load(&a.dataset)?;
    let (name, ids) = match a.split {
        Split::Test => ("test", &dataset.manifest.test),
        Split::Train => ("train", &dataset.manifest.train),
    };
    if ids.is_empty() {
        return Err(Failure::Data(format!("dataset has no {name} views")));
    }
    let frames = stream.frame_count().min(dataset.frame_count());
    let mut player = Player::new(&stream)?;
    let mut rows = Vec::with_capacity(frames);
    for i in 0..frames {
        let fv = dataset.load_frame(i)?;
        let views = match a.split {
            Split::Test => &fv.test,
            Split::Train => &fv.train,
        };
        let mut sum = 0.0;
        for v in views {
            sum += psnr(&player.render(i, &v.camera)?, &v.image)?;
        }
        rows.push(EvalRow {
            frame: i,
            views: views.len(),
            psnr: sum / views.len() as f64,
        });
    }
    let mut out = std::io::stdout().lock();
    writeln!(out, "{:>6} {:>10}", "frame", "PSNR (dB)")?;
    for r in &rows {
        writeln!(out, "{:>6} {:>10.3}", r.frame, r.psnr)?;
    }
    let mean = rows.iter().map(|r| r.psnr).sum::<f64>() / rows.len() as f64;
    writeln!(out, "{:>6} {:>10.3}", "mean", mean)?;
    if let Some(p) = &a.csv {
        write_csv(p, &rows)?;
    }
    Ok(())
}

pub fn export(a: &ExportArgs) -> Result<(), Failure> {
    let stream = StreamReader::open(&a.stream)?;
    let end = a.to.unwrap_or(stream.frame_count());
    let meta = export_viewer_bundle(&stream, a.from..end, &a.out)?;
    eprintln!("exported {} frames to {}", meta.frame_count, a.out.display());
    Ok(())
}

pub fn size(a: &SizeArgs) -> Result<(), Failure> {
    let stream = StreamReader::open(&a.stream)?;
    let rows: Vec<SizeRow> = stream.size_rows();
    print!("{}", format_size_report(&rows));
    println!("preamble {:.3} KB", kb(stream.preamble_bytes));
    if let Some(p) = &a.csv {
        write_csv(p, &rows)?;
    }
    Ok(())
}

pub fn config(a: &ConfigArgs, cfg: &PipelineConfig) -> Result<(), Failure> {
    if a.keys {
        for k in PipelineConfig::keys() {
            println!("{k}");
        }
    } else {
        print!("{}", cfg.to_toml_string()?);
    }
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
