use super::{ImageRGB8, PlaneF32};

/// BT.601 luma in the limited `[16, 235]` range from 8-bit RGB values.
pub fn y_from_rgb(r: f64, g: f64, b: f64) -> f64 {
    16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0
}

pub fn rgb_to_y(img: &ImageRGB8) -> PlaneF32 {
    PlaneF32::from_fn(img.width(), img.height(), |x, y| {
        let [r, g, b] = img.pixel(x, y);
        y_from_rgb(r as f64, g as f64, b as f64).clamp(0.0, 255.0) as f32
    })
}
