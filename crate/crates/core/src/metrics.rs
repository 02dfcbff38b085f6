use crate::error::Result;
use crate::image::Image;

/// Reported in place of an infinite PSNR (identical images).
pub const PSNR_CAP: f64 = 100.0;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio for unit dynamic range, capped at
/// [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * m.log10()).min(PSNR_CAP))
}
