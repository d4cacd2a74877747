//! Shared test fixtures and independent scalar-loop oracles.
//!
//! Nothing here calls into the library's kernels: every oracle is a direct
//! transcription of the defining formula, indexed element by element.
#![allow(dead_code)]

use dlgsa::{PadMode, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

pub fn randn(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        // Box-Muller
        let u1: f64 = rng.random_range(1e-12..1.0);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    })
}

pub fn resolve(i: isize, len: usize, mode: PadMode) -> Option<usize> {
    let n = len as isize;
    if i >= 0 && i < n {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Circular => Some(((i % n + n) % n) as usize),
        PadMode::Reflect => {
            let mut j = i;
            while j < 0 || j >= n {
                if j < 0 {
                    j = -j;
                }
                if j >= n {
                    j = 2 * (n - 1) - j;
                }
            }
            Some(j as usize)
        }
    }
}

/// Grouped cross-correlation, one output element at a time.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
    mode: PadMode,
    groups: usize,
) -> Tensor<f64> {
    let xs = x.shape();
    let ws = w.shape();
    let oh = (xs.h + 2 * pad - ws.h) / stride + 1;
    let ow = (xs.w + 2 * pad - ws.w) / stride + 1;
    let cin_g = xs.c / groups;
    let cout_g = ws.n / groups;
    Tensor::from_fn(Shape::new(xs.n, ws.n, oh, ow), |n, co, oy, ox| {
        let gi = co / cout_g;
        let mut acc = bias.map(|b| b.data()[co]).unwrap_or(0.0);
        for ci in 0..cin_g {
            for ky in 0..ws.h {
                for kx in 0..ws.w {
                    let sy = (oy * stride + ky) as isize - pad as isize;
                    let sx = (ox * stride + kx) as isize - pad as isize;
                    if let (Some(sy), Some(sx)) = (resolve(sy, xs.h, mode), resolve(sx, xs.w, mode)) {
                        acc += w.at(co, ci, ky, kx) * x.at(n, gi * cin_g + ci, sy, sx);
                    }
                }
            }
        }
        acc
    })
}

/// Per-pixel kernels `[n, g*k*k, h, w]` applied to contiguous channel groups.
pub fn dynamic_oracle(kernels: &Tensor<f64>, x: &Tensor<f64>, groups: usize, k: usize) -> Tensor<f64> {
    let s = x.shape();
    let per = s.c / groups;
    let r = (k / 2) as isize;
    Tensor::from_fn(s, |n, ch, y, xx| {
        let gi = ch / per;
        let mut acc = 0.0;
        for dy in 0..k {
            for dx in 0..k {
                let sy = y as isize + dy as isize - r;
                let sx = xx as isize + dx as isize - r;
                if sy < 0 || sx < 0 || sy >= s.h as isize || sx >= s.w as isize {
                    continue;
                }
                acc += kernels.at(n, gi * k * k + dy * k + dx, y, xx) * x.at(n, ch, sy as usize, sx as usize);
            }
        }
        acc
    })
}

pub fn layer_norm_oracle(x: &Tensor<f64>, gain: &[f64], offset: &[f64], eps: f64) -> Tensor<f64> {
    let s = x.shape();
    Tensor::from_fn(s, |n, c, h, w| {
        let vals: Vec<f64> = (0..s.c).map(|cc| x.at(n, cc, h, w)).collect();
        let mean = vals.iter().sum::<f64>() / s.c as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s.c as f64;
        (x.at(n, c, h, w) - mean) / (var + eps).sqrt() * gain[c] + offset[c]
    })
}

pub fn gelu_oracle(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn channels(t: &Tensor<f64>, start: usize, len: usize) -> Tensor<f64> {
    let s = t.shape();
    Tensor::from_fn(Shape::new(s.n, len, s.h, s.w), |n, c, h, w| t.at(n, start + c, h, w))
}

pub fn add_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    Tensor::from_fn(a.shape(), |n, c, h, w| a.at(n, c, h, w) + b.at(n, c, h, w))
}

/// Channel attention per head on `[n, c, h, w]` maps: rows of `Q`, `K`
/// (one per channel, length `h*w`) are L2-normalized, `S[i][j] = <q_i, k_j> / alpha`,
/// then gated by ReLU (`softmax = false`) or row-softmax, and applied to `V`.
pub fn channel_attention_oracle(
    q: &Tensor<f64>,
    k: &Tensor<f64>,
    v: &Tensor<f64>,
    log_alpha: &[f64],
    heads: usize,
    softmax: bool,
) -> (Tensor<f64>, Vec<Vec<Vec<f64>>>) {
    let s = q.shape();
    let d = s.c / heads;
    let hw = s.h * s.w;
    let row = |t: &Tensor<f64>, n: usize, c: usize| -> Vec<f64> {
        let mut r = Vec::with_capacity(hw);
        for y in 0..s.h {
            for x in 0..s.w {
                r.push(t.at(n, c, y, x));
            }
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        r.iter().map(|v| v / norm).collect()
    };
    let mut out = Tensor::zeros(s);
    let mut attn = Vec::new();
    for n in 0..s.n {
        for h in 0..heads {
            let alpha = log_alpha[h].exp();
            let mut a = vec![vec![0.0; d]; d];
            for i in 0..d {
                let qi = row(q, n, h * d + i);
                for j in 0..d {
                    let kj = row(k, n, h * d + j);
                    let dot: f64 = qi.iter().zip(&kj).map(|(x, y)| x * y).sum();
                    a[i][j] = dot / alpha;
                }
                if softmax {
                    let m = a[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = a[i].iter().map(|x| (x - m).exp()).sum();
                    for j in 0..d {
                        a[i][j] = (a[i][j] - m).exp() / z;
                    }
                } else {
                    for j in 0..d {
                        a[i][j] = a[i][j].max(0.0);
                    }
                }
            }
            for i in 0..d {
                for y in 0..s.h {
                    for x in 0..s.w {
                        let mut acc = 0.0;
                        for j in 0..d {
                            acc += a[i][j] * v.at(n, h * d + j, y, x);
                        }
                        out.set(n, h * d + i, y, x, acc);
                    }
                }
            }
            attn.push(a);
        }
    }
    (out, attn)
}

/// Keys cubic kernel, written out in the textbook piecewise form.
pub fn keys_cubic(x: f64) -> f64 {
    let a = -0.5;
    let t = x.abs();
    if t <= 1.0 {
        (a + 2.0) * t.powi(3) - (a + 3.0) * t.powi(2) + 1.0
    } else if t < 2.0 {
        a * t.powi(3) - 5.0 * a * t.powi(2) + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Direct 2D evaluation of the separable bicubic sum for one output pixel at a time.
pub fn bicubic_oracle(src: &[f64], w: usize, h: usize, ow: usize, oh: usize) -> Vec<f64> {
    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        for ox in 0..ow {
            let sx = (ox as f64 + 0.5) * (w as f64 / ow as f64) - 0.5;
            let sy = (oy as f64 + 0.5) * (h as f64 / oh as f64) - 0.5;
            let (bx, by) = (sx.floor() as isize, sy.floor() as isize);
            let mut acc = 0.0;
            for j in by - 1..=by + 2 {
                for i in bx - 1..=bx + 2 {
                    let wt = keys_cubic(sx - i as f64) * keys_cubic(sy - j as f64);
                    let ci = i.clamp(0, w as isize - 1) as usize;
                    let cj = j.clamp(0, h as isize - 1) as usize;
                    acc += wt * src[cj * w + ci];
                }
            }
            out[oy * ow + ox] = acc;
        }
    }
    out
}

/// SSIM by explicit 11x11 window loops.
pub fn ssim_oracle(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut g = [[0.0f64; 11]; 11];
    let mut norm = 0.0;
    for (j, row) in g.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let (dx, dy) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            norm += *v;
        }
    }
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for j in 0..11 {
                for i in 0..11 {
                    let k = (y0 + j) * w + x0 + i;
                    ma += g[j][i] / norm * a[k];
                    mb += g[j][i] / norm * b[k];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for j in 0..11 {
                for i in 0..11 {
                    let k = (y0 + j) * w + x0 + i;
                    let wt = g[j][i] / norm;
                    va += wt * (a[k] - ma).powi(2);
                    vb += wt * (b[k] - mb).powi(2);
                    cov += wt * (a[k] - ma) * (b[k] - mb);
                }
            }
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}
