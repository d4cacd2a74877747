//! PSNR and SSIM on single-channel planes in the `[0, 255]` range.

use super::PlaneF32;
use crate::error::{Error, Result};

/// Value reported in place of an infinite PSNR.
pub const PSNR_REPORT_CAP_DB: f64 = 100.0;

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn same_dims(a: &PlaneF32, b: &PlaneF32) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Usage(format!(
            "plane sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio after removing `border` pixels on each side.
/// Returns `f64::INFINITY` for identical inputs; callers clamp to
/// [`PSNR_REPORT_CAP_DB`] for display.
pub fn psnr(reference: &PlaneF32, test: &PlaneF32, border: usize) -> Result<f64> {
    same_dims(reference, test)?;
    let (w, h) = (reference.width(), reference.height());
    if 2 * border >= w || 2 * border >= h {
        return Err(Error::Usage(format!(
            "border {border} leaves nothing of a {w}x{h} plane"
        )));
    }
    let mut sse = 0.0f64;
    for y in border..h - border {
        for x in border..w - border {
            let d = reference.get(x, y) as f64 - test.get(x, y) as f64;
            sse += d * d;
        }
    }
    let n = ((w - 2 * border) * (h - 2 * border)) as f64;
    let mse = sse / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WIN] {
    let mut g = [0.0; SSIM_WIN];
    let c = (SSIM_WIN / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Valid-mode separable filtering.
fn filter_valid(src: &[f64], w: usize, h: usize, g: &[f64; SSIM_WIN]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WIN, h + 1 - SSIM_WIN);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let row = &src[y * w + x..y * w + x + SSIM_WIN];
            tmp[y * ow + x] = row.iter().zip(g).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WIN).map(|k| tmp[(y + k) * ow + x] * g[k]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11x11 Gaussian window positions.
pub fn ssim(reference: &PlaneF32, test: &PlaneF32) -> Result<f64> {
    same_dims(reference, test)?;
    let (w, h) = (reference.width(), reference.height());
    if w < SSIM_WIN || h < SSIM_WIN {
        return Err(Error::Usage(format!(
            "SSIM needs at least {SSIM_WIN}x{SSIM_WIN}, got {w}x{h}"
        )));
    }
    let g = gaussian_window();
    let a: Vec<f64> = reference.samples().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = test.samples().iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(&a, w, h, &g);
    let mu_b = filter_valid(&b, w, h, &g);
    let aa = filter_valid(&prod(&a, &a), w, h, &g);
    let bb = filter_valid(&prod(&b, &b), w, h, &g);
    let ab = filter_valid(&prod(&a, &b), w, h, &g);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
            / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    Ok(total / mu_a.len() as f64)
}
