//! 8-bit RGB PNG reading and writing.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc
        .write_header()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    w.write_image_data(&img.to_rgb8())
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Reads an 8-bit PNG into `[0, 1]` RGB. Gray and alpha channels are
/// expanded or dropped.
pub fn read_png(path: &Path) -> Result<Image> {
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let bad = |e: &dyn std::fmt::Display| Error::Image(format!("{}: {e}", path.display()));
    let mut dec = png::Decoder::new(BufReader::new(File::open(path)?));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| bad(&e))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| bad(&"image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(&e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(bad(&"only 8-bit images are supported"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let data = &buf[..info.buffer_size()];
    let mut rgb = Vec::with_capacity(w * h * 3);
    for px in data.chunks_exact(channels) {
        match channels {
            1 | 2 => rgb.extend_from_slice(&[px[0]; 3]),
            _ => rgb.extend_from_slice(&px[..3]),
        }
    }
    Image::from_rgb8(w, h, &rgb)
}
