//! Analytic rasterizer gradients against central finite differences.

mod common;

use common::*;
use nalgebra::Vector3;
use splatstream_core::image::Image;
use splatstream_core::raster::{rasterize_backward, rasterize_forward, RasterConfig};

#[test]
fn every_parameter_gradient_matches_finite_differences() {
    let mut n = 0;
    for (seed, bg) in [
        (0, Vector3::zeros()),
        (1, Vector3::zeros()),
        (2, Vector3::zeros()),
        (17, Vector3::new(0.3, 0.5, 0.2)),
    ] {
        let c = raster_gradient_check(seed, bg);
        assert!(c.failures.is_empty(), "{:#?}", c.failures);
        n += c.checked;
    }
    assert_eq!(n, 4 * 5 * 23);
}

#[test]
fn viewspace_gradient_matches_finite_differences_of_screen_position() {
    // shifting the whole cloud along the camera x axis by δ moves every
    // projected mean by fx δ / z; with one Gaussian this pins |dL/dμ₂d|
    let (cloud, cam) = smooth_five_gaussian_scene(4);
    let single = cloud.select(&[0]);
    let mut r = rng(99);
    let w = Image::from_data(32, 32, random_weights(&mut r, 32 * 32 * 3)).unwrap();
    let (_, ctx) = rasterize_forward(&single, &cam, Vector3::zeros(), &RasterConfig::default());
    let g = rasterize_backward(&ctx, &w).unwrap();
    let xc = cam.world_to_camera(&single.means[0]);
    let right = cam.rotation.row(0).transpose();
    let down = cam.rotation.row(1).transpose();
    let mut screen = [0.0; 2];
    for (k, axis) in [right, down].iter().enumerate() {
        // move along a camera axis by δ·z/f (approximately one pixel·δ); the
        // depth is unchanged, so only μ₂d and the view direction move
        let mut p = single.clone();
        let mut m = single.clone();
        let step = 1e-4 * xc.z / cam.fx;
        p.means[0] += axis * step;
        m.means[0] -= axis * step;
        screen[k] =
            (weighted_loss(&p, &cam, Vector3::zeros(), &w) - weighted_loss(&m, &cam, Vector3::zeros(), &w)) / 2e-4;
    }
    // the mean gradient also flows through J and the view direction, so
    // compare only the order of magnitude of the statistic
    let stat = g.viewspace_grad_norm_accum[0];
    // screen offsets are in pixels; the statistic is in device units
    let fd = (screen[0] * 16.0).hypot(screen[1] * 16.0);
    assert!(stat > 0.5 * fd && stat < 2.0 * fd, "stat {stat} fd {fd}");
}
