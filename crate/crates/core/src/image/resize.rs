//! Separable bicubic resampling (a = -0.5, edge clamp, half-pixel centers).

use super::{ImageRGB8, PlaneF32};
use crate::error::{config_err, Result};
use crate::tensor::{Scalar, Shape, Tensor};

const A: f64 = -0.5;

/// Cubic convolution kernel with `a = -0.5`.
pub fn cubic_weight(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Four (index, weight) taps per output position.
fn taps(in_len: usize, out_len: usize) -> Vec<[(usize, f64); 4]> {
    let scale = in_len as f64 / out_len as f64;
    let last = in_len as isize - 1;
    (0..out_len)
        .map(|d| {
            let src = (d as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut row = [(0, 0.0); 4];
            for (j, tap) in row.iter_mut().enumerate() {
                let off = j as isize - 1;
                let idx = (base as isize + off).clamp(0, last) as usize;
                *tap = (idx, cubic_weight(frac - off as f64));
            }
            row
        })
        .collect()
}

fn resample(src: &[f64], w: usize, h: usize, ow: usize, oh: usize) -> Vec<f64> {
    let xt = taps(w, ow);
    let yt = taps(h, oh);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (x, t) in xt.iter().enumerate() {
            tmp[y * ow + x] = t.iter().map(|&(i, wt)| row[i] * wt).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for (y, t) in yt.iter().enumerate() {
        for x in 0..ow {
            out[y * ow + x] = t.iter().map(|&(i, wt)| tmp[i * ow + x] * wt).sum();
        }
    }
    out
}

fn check(out_w: usize, out_h: usize) -> Result<()> {
    if out_w == 0 || out_h == 0 {
        return config_err(format!("resize target {out_w}x{out_h} must be positive"));
    }
    Ok(())
}

pub fn bicubic_resize(plane: &PlaneF32, out_w: usize, out_h: usize) -> Result<PlaneF32> {
    check(out_w, out_h)?;
    let src: Vec<f64> = plane.samples().iter().map(|&v| v as f64).collect();
    let out = resample(&src, plane.width(), plane.height(), out_w, out_h);
    PlaneF32::new(out_w, out_h, out.into_iter().map(|v| v as f32).collect())
}

/// Per-channel resize; results are rounded and clamped back to 8 bits.
pub fn bicubic_resize_image(img: &ImageRGB8, out_w: usize, out_h: usize) -> Result<ImageRGB8> {
    check(out_w, out_h)?;
    let (w, h) = (img.width(), img.height());
    let mut pixels = vec![0u8; 3 * out_w * out_h];
    for c in 0..3 {
        let src: Vec<f64> = img.pixels()[c..].iter().step_by(3).map(|&v| v as f64).collect();
        let out = resample(&src, w, h, out_w, out_h);
        for (i, v) in out.into_iter().enumerate() {
            pixels[3 * i + c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    ImageRGB8::new(out_w, out_h, pixels)
}

/// Resize every plane of an NCHW tensor without clamping.
pub fn bicubic_resize_tensor<T: Scalar>(t: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    check(out_w, out_h)?;
    let s = t.shape();
    let plane = s.h * s.w;
    let mut data = Vec::with_capacity(s.n * s.c * out_h * out_w);
    for p in t.data().chunks(plane.max(1)).take(s.n * s.c) {
        let src: Vec<f64> = p.iter().map(|v| v.as_f64()).collect();
        data.extend(resample(&src, s.w, s.h, out_w, out_h).into_iter().map(T::lit));
    }
    Tensor::from_vec(Shape::new(s.n, s.c, out_h, out_w), data)
}
