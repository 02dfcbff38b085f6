mod common;

use nalgebra::Vector3;
use splatstream_core::io::png::read_png;
use splatstream_core::io::Dataset;
use splatstream_core::synth::{generate, GroundTruth, SynthParams};

#[test]
fn the_blob_changes_only_pixels_around_it() {
    let dir = tempfile::tempdir().unwrap();
    let p = common::tiny_scene_params(3, 2);
    let ds = Dataset::load(&generate(&p, dir.path()).unwrap()).unwrap();
    let blob = &p.emerging[0];
    let centre = Vector3::from(blob.center);
    for spec in &ds.manifest.cameras {
        let cam = ds.camera(&spec.id).unwrap();
        let load = |t: usize| read_png(&ds.root.join(&ds.manifest.frames[t].images[&spec.id])).unwrap();
        let (f0, f1, f2) = (load(0), load(1), load(2));
        assert_eq!(f0, f1, "{}: nothing happens before the blob", spec.id);
        let (px, depth) = cam.project_point(&centre).unwrap();
        let reach = 3.0 * blob.radius * cam.fx / depth + 3.0;
        let mut changed = 0;
        for y in 0..f2.height {
            for x in 0..f2.width {
                if f2.pixel(x, y) != f1.pixel(x, y) {
                    changed += 1;
                    let d = (Vector3::new(x as f64 + 0.5, y as f64 + 0.5, 0.0) - Vector3::new(px.x, px.y, 0.0)).norm();
                    assert!(
                        d <= reach,
                        "{}: pixel ({x}, {y}) changed {d:.1} px from the blob",
                        spec.id
                    );
                }
            }
        }
        assert!(changed > 0, "{}: the blob is visible", spec.id);
    }
}

#[test]
fn ground_truth_lists_each_translation() {
    let dir = tempfile::tempdir().unwrap();
    let t = [0.03, -0.01, 0.02];
    let mut p = SynthParams::rigid_scene(4, t);
    p.width = 16;
    p.height = 16;
    p.focal = 20.0;
    p.cameras = 3;
    p.test_stride = 3;
    generate(&p, dir.path()).unwrap();
    let gt = GroundTruth::load(&dir.path().join("ground_truth.json")).unwrap();
    assert_eq!(gt.frames, 4);
    assert_eq!(gt.translations[0], vec![[0.0; 3]; 3]);
    for f in 1..4 {
        assert_eq!(gt.translations[f], vec![t; 3]);
    }
    let c = Vector3::from(gt.objects[1].center);
    assert_eq!(gt.label_point(&c, 1.0), Some(1));
    assert_eq!(gt.label_point(&Vector3::repeat(50.0), 1.0), None);
}
