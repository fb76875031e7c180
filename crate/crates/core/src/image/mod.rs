//! Grayscale images with intensities in `[0, 1]`.
//!
//! Pixel `(x, y)` lives at `data[y * width + x]`; `x` runs right along a row
//! and `y` runs down the rows. Pixel centers sit at integer coordinates.

mod io;
mod preprocess;

pub use io::{load_image, save_image};
pub use preprocess::{
    clahe, gaussian_filter_3x3, subtract_background, DEFAULT_CLAHE_CLIP_LIMIT,
    DEFAULT_CLAHE_TILES,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    /// Validates the length and range of `data`.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "image must be non-empty, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "expected {} intensities for {width}x{height}, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::InvalidImage(format!(
                "intensity {v} at index {i} outside [0, 1]"
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Constant image; `value` is clamped into `[0, 1]`.
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!(width > 0 && height > 0, "image must be non-empty");
        Image {
            width,
            height,
            data: vec![clamp_unit(value); width * height],
        }
    }

    /// Builds an image from `f(x, y)`, clamping each value into `[0, 1]`.
    /// Non-finite values become 0.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(width > 0 && height > 0, "image must be non-empty");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(clamp_unit(f(x, y)));
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Value at `(x, y)` or 0 outside the image.
    #[inline]
    pub fn get_or_zero(&self, x: isize, y: isize) -> f32 {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            0.0
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    /// Each intensity rounded to the nearest multiple of 1/255 (half up),
    /// i.e. what survives an 8-bit save.
    pub fn quantized(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| quantize_u8(v) as f32 / 255.0)
                .collect(),
        }
    }

    pub(crate) fn same_dims(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// `round(v * 255)` with halves rounded up.
#[inline]
pub(crate) fn quantize_u8(v: f32) -> u8 {
    (clamp_unit(v) as f64 * 255.0 + 0.5).floor().min(255.0) as u8
}

/// Acquisition metadata for converting pixel displacements to velocities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    /// Time between consecutive frames, seconds.
    pub frame_interval: f64,
    /// Physical length per pixel.
    pub magnification: f64,
}

impl SequenceMeta {
    pub fn new(frame_interval: f64, magnification: f64) -> Result<Self> {
        let meta = SequenceMeta {
            frame_interval,
            magnification,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_interval.is_finite() && self.frame_interval > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "frame interval must be positive, got {}",
                self.frame_interval
            )));
        }
        if !(self.magnification.is_finite() && self.magnification > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "magnification must be positive, got {}",
                self.magnification
            )));
        }
        Ok(())
    }

    /// Multiplier from px/frame to length/time.
    pub fn velocity_scale(&self) -> f64 {
        self.magnification / self.frame_interval
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.frame_interval
    }
}
