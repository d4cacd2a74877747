//! Sparse global self-attention: channel-wise (transposed) attention whose
//! similarity matrix is gated by ReLU, plus tiled test-time evaluation.

use rand::Rng;

use crate::error::{config_err, dim_err, Result};
use crate::layers::{conv, depthwise, init_conv, init_norm, norm, PROJ_STD};
use crate::mhdlsa::{ffn_hidden, gated_ffn, init_gated_ffn};
use crate::params::{join, Init, ParamStore, Scope};
use crate::tensor::{ConvSpec, Graph, PadMode, Scalar, Shape, Tensor, Var};

/// Rows of `Q` and `K` are scaled to unit L2 norm over the pixel axis; rows
/// with a smaller norm than this are divided by it instead.
pub const ROW_NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlobalAttention {
    Relu,
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparseGsaConfig {
    pub channels: usize,
    pub heads: usize,
    pub ffn_expansion: f64,
    pub pad: PadMode,
    pub attention: GlobalAttention,
}

impl SparseGsaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.channels == 0 || self.channels % self.heads != 0 {
            return config_err(format!(
                "{} channels do not split into {} heads",
                self.channels, self.heads
            ));
        }
        ffn_hidden(self.channels, self.ffn_expansion)?;
        Ok(())
    }
}

pub fn init_sparsegsa<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    cfg: &SparseGsaConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let n = |s: &str| join(prefix, s);
    let c = cfg.channels;
    init_norm(store, &n("norm"), c, rng);
    init_conv(store, &n("qkv"), 3 * c, c, 1, Init::TruncNormal(PROJ_STD), true, rng);
    init_conv(store, &n("qkv_dw"), 3 * c, 1, 3, Init::FanInUniform, true, rng);
    store.init(n("log_alpha"), Shape::vector(cfg.heads), Init::Zeros, rng);
    init_conv(store, &n("proj_out"), c, c, 1, Init::Zeros, true, rng);
    init_gated_ffn(store, &n("ffn"), c, ffn_hidden(c, cfg.ffn_expansion)?, rng);
    Ok(())
}

/// Fused 1x1 then depthwise 3x3 projection, split into `(Q, K, V)` in that order.
pub fn qkv_project<T: Scalar>(g: &mut Graph<T>, s: &Scope, x: Var, pad: PadMode) -> Result<(Var, Var, Var)> {
    let c = g.shape(x).c;
    let y = conv(g, s, "qkv", x, ConvSpec::same(1))?;
    let y = depthwise(g, s, "qkv_dw", y, pad)?;
    Ok((
        g.narrow_channels(y, 0, c)?,
        g.narrow_channels(y, c, c)?,
        g.narrow_channels(y, 2 * c, c)?,
    ))
}

/// Channel attention per head. Returns the output `[n, c, h, w]` and the
/// attention matrices `[n * heads, 1, c / heads, c / heads]`.
///
/// With `Q^`, `K^`, `V^` the per-head `(c/heads) x (h*w)` views and the rows
/// of `Q^`, `K^` normalized, `A = gate(Q^ K^T / alpha)` and the output is `A V^`.
pub fn channel_attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    log_alpha: Var,
    heads: usize,
    kind: GlobalAttention,
) -> Result<(Var, Var)> {
    let s = g.shape(q);
    if heads == 0 || s.c % heads != 0 {
        return config_err(format!("{} channels do not split into {heads} heads", s.c));
    }
    if g.shape(k) != s || g.shape(v) != s {
        return dim_err(format!("attention operands {s}, {}, {}", g.shape(k), g.shape(v)));
    }
    let per_head = Shape::new(s.n * heads, 1, s.c / heads, s.h * s.w);
    let q = g.reshape(q, per_head)?;
    let k = g.reshape(k, per_head)?;
    let v = g.reshape(v, per_head)?;
    let q = g.normalize_rows(q, ROW_NORM_EPS);
    let k = g.normalize_rows(k, ROW_NORM_EPS);
    let a = g.matmul_t(q, k, false, true)?;
    let a = g.head_scale(a, log_alpha, heads)?;
    let a = match kind {
        GlobalAttention::Relu => g.relu(a),
        GlobalAttention::Softmax => g.softmax_rows(a),
    };
    let out = g.batched_matmul(a, v)?;
    Ok((g.reshape(out, s)?, a))
}

pub fn sparse_channel_attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    log_alpha: Var,
    heads: usize,
) -> Result<Var> {
    Ok(channel_attention(g, q, k, v, log_alpha, heads, GlobalAttention::Relu)?.0)
}

pub fn softmax_channel_attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    log_alpha: Var,
    heads: usize,
) -> Result<Var> {
    Ok(channel_attention(g, q, k, v, log_alpha, heads, GlobalAttention::Softmax)?.0)
}

/// Attention with its residual, then the gated FFN.
pub fn sparsegsa_block<T: Scalar>(g: &mut Graph<T>, s: &Scope, cfg: &SparseGsaConfig, x: Var) -> Result<Var> {
    let y = norm(g, s, "norm", x)?;
    let (q, k, v) = qkv_project(g, s, y, cfg.pad)?;
    let (z, _) = channel_attention(g, q, k, v, s.var("log_alpha")?, cfg.heads, cfg.attention)?;
    let z = conv(g, s, "proj_out", z, ConvSpec::same(1))?;
    let x = g.add(x, z)?;
    gated_ffn(g, &s.at("ffn"), x, cfg.pad)
}

/// Tile origins along one axis: a stride-`win` grid whose last tile is
/// shifted back to end at the border.
pub fn tile_starts(len: usize, win: usize) -> Vec<usize> {
    if len <= win {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..len - win + 1).step_by(win).collect();
    if starts.last() != Some(&(len - win)) {
        starts.push(len - win);
    }
    starts
}

/// Apply `f` independently to every `win x win` tile of `x` and stitch the
/// results, averaging pixels covered by more than one tile.
pub fn tlc_windowed<T: Scalar>(
    x: &Tensor<T>,
    win: usize,
    mut f: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    if win == 0 {
        return config_err("TLC window must be positive");
    }
    let s = x.shape();
    let (th, tw) = (win.min(s.h), win.min(s.w));
    let mut acc = vec![0.0f64; s.numel()];
    let mut count = vec![0u32; s.h * s.w];
    for &y0 in &tile_starts(s.h, win) {
        for &x0 in &tile_starts(s.w, win) {
            let tile = f(&x.crop(y0, x0, th, tw)?)?;
            if tile.shape() != Shape::new(s.n, s.c, th, tw) {
                return dim_err(format!("TLC tile function changed shape to {}", tile.shape()));
            }
            for y in 0..th {
                for xx in 0..tw {
                    count[(y0 + y) * s.w + x0 + xx] += 1;
                }
            }
            for n in 0..s.n {
                for c in 0..s.c {
                    for y in 0..th {
                        for xx in 0..tw {
                            acc[s.offset(n, c, y0 + y, x0 + xx)] += tile.at(n, c, y, xx).as_f64();
                        }
                    }
                }
            }
        }
    }
    let plane = s.h * s.w;
    let data = acc
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let k = count[i % plane];
            if k == 1 {
                T::lit(v)
            } else {
                T::lit(v / k as f64)
            }
        })
        .collect();
    Tensor::from_vec(s, data)
}

/// Inference-only tiled evaluation of the block stored under `prefix`.
pub fn sparsegsa_tlc<T: Scalar>(
    store: &ParamStore<T>,
    prefix: &str,
    cfg: &SparseGsaConfig,
    x: &Tensor<T>,
    win: usize,
) -> Result<Tensor<T>> {
    tlc_windowed(x, win, |tile| {
        let mut g = Graph::new();
        let b = store.bind_prefix(&mut g, prefix, false);
        let xv = g.input(tile.clone());
        let y = sparsegsa_block(&mut g, &b.scope(prefix), cfg, xv)?;
        Ok(g.value(y).clone())
    })
}
