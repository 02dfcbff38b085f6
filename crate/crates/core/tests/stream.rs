mod common;

use std::sync::OnceLock;

use common::{stream_bytes, tiny_config, tiny_dataset, tiny_scene_params};
use splatstream_core::io::bundle::frame_file_name;
use splatstream_core::io::dataset::DatasetManifest;
use splatstream_core::io::png::write_png;
use splatstream_core::io::{
    export_viewer_bundle, read_bundle_frame, read_bundle_metadata, BundleFrame, Dataset, StreamReader,
};
use splatstream_core::pipeline::{init_cloud_from_points, process_stream, resume_stream, train_initial, Player};
use splatstream_core::synth::generate;
use splatstream_core::{Error, Image};

struct Fixture {
    _dir: tempfile::TempDir,
    dataset: Dataset,
    bytes: Vec<u8>,
}

/// Four frames with a blob appearing at frame 2, streamed once and shared.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(dir.path(), 4, 2);
        let bytes = stream_bytes(&dataset, &tiny_config());
        Fixture {
            _dir: dir,
            dataset,
            bytes,
        }
    })
}

#[test]
fn stream_parses_and_reencodes_to_the_same_bytes() {
    let f = fixture();
    let s = StreamReader::from_bytes(&f.bytes).unwrap();
    assert_eq!(s.frame_count(), 4);
    assert_eq!(s.to_bytes().unwrap(), f.bytes);
    let total: usize = s.size_rows().iter().map(|r| r.total_bytes).sum();
    assert_eq!(s.preamble_bytes + total, f.bytes.len());
}

#[test]
fn corrupted_byte_names_the_frame() {
    let f = fixture();
    let mut b = f.bytes.clone();
    let n = b.len();
    b[n - 10] ^= 0x40;
    match StreamReader::from_bytes(&b) {
        Err(Error::Checksum { block }) => assert_eq!(block, "frame 3"),
        other => panic!("expected checksum error, got {other:?}"),
    }
}

#[test]
fn truncated_stream_is_reported() {
    let f = fixture();
    let b = &f.bytes[..f.bytes.len() - 3];
    match StreamReader::from_bytes(b) {
        Err(Error::Truncated { block }) => assert_eq!(block, "frame 3"),
        other => panic!("expected truncation error, got {other:?}"),
    }
}

#[test]
fn version_and_magic_are_checked() {
    let f = fixture();
    let mut b = f.bytes.clone();
    b[4] = 9;
    assert!(matches!(
        StreamReader::from_bytes(&b),
        Err(Error::VersionMismatch { expected: 1, found: 9 })
    ));
    let mut b = f.bytes.clone();
    b[0] = b'X';
    assert!(matches!(StreamReader::from_bytes(&b), Err(Error::BadMagic { .. })));
}

#[test]
fn same_seed_gives_the_same_stream() {
    let f = fixture();
    assert_eq!(stream_bytes(&f.dataset, &tiny_config()), f.bytes);
}

#[test]
fn resuming_reproduces_the_uninterrupted_stream() {
    let f = fixture();
    let s = StreamReader::from_bytes(&f.bytes).unwrap();
    for keep in [0, 2] {
        let mut out = Vec::new();
        let summary = resume_stream(&f.dataset, &tiny_config(), &s, keep, &mut out, &mut |_| {}).unwrap();
        assert_eq!(summary.frames, 4);
        assert_eq!(out, f.bytes, "resumed after frame {keep}");
    }
    let mut out = Vec::new();
    assert!(matches!(
        resume_stream(&f.dataset, &tiny_config(), &s, 4, &mut out, &mut |_| {}),
        Err(Error::FrameOutOfRange { index: 4, count: 4 })
    ));
}

#[test]
fn playback_frame_zero_is_the_initial_cloud() {
    let f = fixture();
    let s = StreamReader::from_bytes(&f.bytes).unwrap();
    let mut p = Player::new(&s).unwrap();
    let (initial, _) = train_initial(&f.dataset, &tiny_config()).unwrap();
    assert_eq!(p.render_set(0).unwrap(), initial);
    assert_eq!(s.initial, initial);
}

#[test]
fn playback_seeks_both_ways_and_rejects_missing_frames() {
    let f = fixture();
    let s = StreamReader::from_bytes(&f.bytes).unwrap();
    let mut p = Player::new(&s).unwrap();
    let late = p.render_set(3).unwrap();
    let early = p.render_set(1).unwrap();
    let mut fresh = Player::new(&s).unwrap();
    assert_eq!(fresh.render_set(1).unwrap(), early);
    assert_eq!(p.render_set(3).unwrap(), late);
    assert_eq!(late.len(), s.initial.len() + s.frames[2].additional.len());
    assert!(matches!(
        p.render_set(4),
        Err(Error::FrameOutOfRange { index: 4, count: 4 })
    ));
}

#[test]
fn viewer_bundle_matches_the_player() {
    let f = fixture();
    let s = StreamReader::from_bytes(&f.bytes).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let meta = export_viewer_bundle(&s, 1..4, dir.path()).unwrap();
    assert_eq!(meta, read_bundle_metadata(dir.path()).unwrap());
    assert_eq!(meta.first_frame, 1);
    assert_eq!(meta.files, (1..4).map(frame_file_name).collect::<Vec<_>>());
    let mut p = Player::new(&s).unwrap();
    for i in 1..4 {
        let got = read_bundle_frame(dir.path(), i).unwrap();
        let want = BundleFrame::from_cloud(&p.render_set(i).unwrap()).unwrap();
        assert_eq!(got, want, "frame {i}");
        assert_eq!(meta.gaussian_counts[i - 1], got.count());
    }
    assert!(!dir.path().join(frame_file_name(0)).exists());
    assert!(matches!(
        export_viewer_bundle(&s, 2..5, dir.path()),
        Err(Error::FrameOutOfRange { .. })
    ));
}

#[test]
fn stage1_only_frames_carry_no_gaussians() {
    let f = fixture();
    let mut cfg = tiny_config();
    cfg.stage2_iterations = 0;
    let s = StreamReader::from_bytes(&stream_bytes(&f.dataset, &cfg)).unwrap();
    assert!(s.frames.iter().all(|r| r.additional.is_empty()));
}

#[test]
fn a_single_frame_dataset_streams_only_the_preamble() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = tiny_scene_params(1, 1);
    p.emerging.clear();
    let ds = Dataset::load(&generate(&p, dir.path()).unwrap()).unwrap();
    let mut out = Vec::new();
    let mut events = 0;
    let summary = process_stream(&ds, &tiny_config(), &mut out, &mut |_| events += 1).unwrap();
    assert_eq!((summary.frames, events), (1, 1));
    assert_eq!(summary.bytes, summary.preamble_bytes);
    assert_eq!(StreamReader::from_bytes(&out).unwrap().frame_count(), 1);
}

#[test]
fn zero_frame0_iterations_keep_the_seeded_cloud() {
    let f = fixture();
    let mut cfg = tiny_config();
    cfg.frame0.iterations = 0;
    let (initial, _) = train_initial(&f.dataset, &cfg).unwrap();
    let points = f.dataset.init_points().unwrap().unwrap();
    let mut seeded = init_cloud_from_points(&points, cfg.frame0.init_opacity);
    seeded.quantize_f32();
    assert_eq!(initial, seeded);
}

fn copy_dataset(dir: &std::path::Path) -> std::path::PathBuf {
    let mut p = tiny_scene_params(2, 1);
    p.emerging.clear();
    generate(&p, dir).unwrap()
}

#[test]
fn missing_images_and_frames_are_dataset_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = copy_dataset(dir.path());
    let ds = Dataset::load(&m).unwrap();
    let victim = dir.path().join(&ds.manifest.frames[1].images["cam01"]);
    std::fs::remove_file(&victim).unwrap();
    assert!(ds.load_frame(0).is_ok());
    match ds.load_frame(1) {
        Err(Error::MissingFile { path }) => assert_eq!(path, victim),
        other => panic!("expected missing file, got {other:?}"),
    }
    assert!(matches!(ds.load_frame(2), Err(Error::MissingFrame { index: 2 })));
    assert!(matches!(
        Dataset::load(&dir.path().join("nope.json")),
        Err(Error::MissingFile { .. })
    ));
}

#[test]
fn wrong_image_size_is_a_resolution_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let m = copy_dataset(dir.path());
    let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(&m).unwrap()).unwrap();
    write_png(
        &dir.path().join(&manifest.frames[0].images["cam02"]),
        &Image::new(20, 24),
    )
    .unwrap();
    let ds = Dataset::load(&m).unwrap();
    match ds.load_frame(0) {
        Err(Error::ResolutionMismatch {
            camera,
            expected,
            found,
        }) => {
            assert_eq!(camera, "cam02");
            assert_eq!(expected, (24, 24));
            assert_eq!(found, (20, 24));
        }
        other => panic!("expected resolution mismatch, got {other:?}"),
    }
}
