//! A posed training or evaluation image.

use crate::camera::Camera;
use crate::image::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
}
