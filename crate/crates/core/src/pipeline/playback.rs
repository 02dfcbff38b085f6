use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::image::Image;
use crate::io::StreamReader;
use crate::raster::render;
use crate::transform::{apply_ntc, TransformOptions};

/// Reconstructs frames from a stream by folding the per-frame caches over
/// the initial cloud. Moving forward is incremental; seeking backward
/// restarts from frame 0.
pub struct Player<'a> {
    stream: &'a StreamReader,
    frame: usize,
    cloud: GaussianCloud,
    opts: TransformOptions,
}

impl<'a> Player<'a> {
    pub fn new(stream: &'a StreamReader) -> Result<Self> {
        Ok(Player {
            stream,
            frame: 0,
            cloud: stream.initial.clone(),
            opts: TransformOptions {
                rotate_sh: stream.info.rotate_sh,
            },
        })
    }

    fn check(&self, index: usize) -> Result<()> {
        if index >= self.stream.frame_count() {
            return Err(Error::FrameOutOfRange {
                index,
                count: self.stream.frame_count(),
            });
        }
        Ok(())
    }

    /// The carried-forward cloud at frame `index` (without that frame's
    /// additional Gaussians).
    pub fn transformed(&mut self, index: usize) -> Result<&GaussianCloud> {
        self.check(index)?;
        if index < self.frame {
            self.frame = 0;
            self.cloud = self.stream.initial.clone();
        }
        while self.frame < index {
            let rec = &self.stream.frames[self.frame];
            self.cloud = apply_ntc(&self.cloud, &rec.ntc()?, &self.opts)?;
            self.frame += 1;
        }
        Ok(&self.cloud)
    }

    /// Everything rendered at frame `index`.
    pub fn render_set(&mut self, index: usize) -> Result<GaussianCloud> {
        let t = self.transformed(index)?.clone();
        Ok(if index == 0 {
            t
        } else {
            t.union(&self.stream.frames[index - 1].additional)
        })
    }

    pub fn render(&mut self, index: usize, camera: &Camera) -> Result<Image> {
        let set = self.render_set(index)?;
        let info = &self.stream.info;
        Ok(render(&set, camera, info.background.into(), &info.raster))
    }
}

pub fn playback_render(stream: &StreamReader, frame_index: usize, camera: &Camera) -> Result<Image> {
    Player::new(stream)?.render(frame_index, camera)
}
