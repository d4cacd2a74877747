//! Image containers, PPM I/O, color conversion, resampling, quality metrics,
//! and procedural training images.

mod color;
mod metrics;
mod ppm;
mod resize;
mod synth;

pub use color::{rgb_to_y, y_from_rgb};
pub use metrics::{psnr, ssim, PSNR_REPORT_CAP_DB};
pub use ppm::{read_ppm, write_ppm};
pub use resize::{bicubic_resize, bicubic_resize_image, bicubic_resize_tensor, cubic_weight};
pub use synth::{synth_image, Family};

use crate::error::{dim_err, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// 8-bit interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ImageRGB8 {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageRGB8 {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return dim_err(format!("image dimensions must be positive, got {width}x{height}"));
        }
        if pixels.len() != 3 * width * height {
            return dim_err(format!(
                "{} bytes for a {width}x{height} RGB image",
                pixels.len()
            ));
        }
        Ok(ImageRGB8 {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// `[1, 3, h, w]` tensor with samples scaled to `[0, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let inv = 1.0 / 255.0;
        Tensor::from_fn(Shape::new(1, 3, self.height, self.width), |_, c, y, x| {
            T::lit(self.pixels[3 * (y * self.width + x) + c] as f64 * inv)
        })
    }

    /// Inverse of [`ImageRGB8::to_tensor`] for batch item `n`; values are
    /// clamped to `[0, 1]` and rounded.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let s = t.shape();
        if s.c != 3 || n >= s.n {
            return dim_err(format!("expected an RGB tensor with item {n}, got {s}"));
        }
        let mut pixels = Vec::with_capacity(3 * s.h * s.w);
        for y in 0..s.h {
            for x in 0..s.w {
                for c in 0..3 {
                    let v = t.at(n, c, y, x).as_f64().clamp(0.0, 1.0);
                    pixels.push((v * 255.0).round() as u8);
                }
            }
        }
        ImageRGB8::new(s.w, s.h, pixels)
    }

    /// Top-left `w x h` region.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return dim_err(format!(
                "crop {w}x{h} at ({x0},{y0}) exceeds {}x{}",
                self.width, self.height
            ));
        }
        let mut pixels = Vec::with_capacity(3 * w * h);
        for y in y0..y0 + h {
            let row = 3 * (y * self.width + x0);
            pixels.extend_from_slice(&self.pixels[row..row + 3 * w]);
        }
        ImageRGB8::new(w, h, pixels)
    }
}

/// Single-channel float image, nominally in `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneF32 {
    width: usize,
    height: usize,
    samples: Vec<f32>,
}

impl PlaneF32 {
    pub fn new(width: usize, height: usize, samples: Vec<f32>) -> Result<Self> {
        if samples.len() != width * height {
            return dim_err(format!(
                "{} samples for a {width}x{height} plane",
                samples.len()
            ));
        }
        Ok(PlaneF32 {
            width,
            height,
            samples,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let samples = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        PlaneF32 {
            width,
            height,
            samples,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.samples[y * self.width + x]
    }

    /// Remove `border` samples from every side.
    pub fn shave(&self, border: usize) -> Result<Self> {
        if 2 * border >= self.width || 2 * border >= self.height {
            return dim_err(format!(
                "border {border} leaves nothing of a {}x{} plane",
                self.width, self.height
            ));
        }
        let (w, h) = (self.width - 2 * border, self.height - 2 * border);
        Ok(PlaneF32::from_fn(w, h, |x, y| self.get(x + border, y + border)))
    }
}
