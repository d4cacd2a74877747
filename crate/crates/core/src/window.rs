//! Windowed spatial softmax self-attention, the local-mixing baseline used by
//! the block ablations.

use std::rc::Rc;

use rand::Rng;

use crate::error::{dim_err, Result};
use crate::layers::{conv, init_conv, PROJ_STD};
use crate::params::{join, Init, ParamStore, Scope};
use crate::tensor::{ConvSpec, Graph, Scalar, Shape, Var};

pub fn init_window_attention<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    channels: usize,
    rng: &mut R,
) {
    let tn = Init::TruncNormal(PROJ_STD);
    init_conv(store, &join(prefix, "qkv"), 3 * channels, channels, 1, tn, true, rng);
    init_conv(store, &join(prefix, "proj_out"), channels, channels, 1, Init::Zeros, true, rng);
}

/// Index mapping `[n, c, h, w]` to `[n * heads * windows, 1, win * win, c / heads]`.
pub fn window_partition_index(s: Shape, heads: usize, win: usize) -> Result<Vec<usize>> {
    if win == 0 || s.h % win != 0 || s.w % win != 0 || s.c % heads != 0 {
        return dim_err(format!(
            "window attention: {s} does not tile into {win}x{win} windows with {heads} heads"
        ));
    }
    let d = s.c / heads;
    let (nwy, nwx) = (s.h / win, s.w / win);
    let mut index = Vec::with_capacity(s.numel());
    for n in 0..s.n {
        for head in 0..heads {
            for wy in 0..nwy {
                for wx in 0..nwx {
                    for ty in 0..win {
                        for tx in 0..win {
                            for j in 0..d {
                                index.push(s.offset(n, head * d + j, wy * win + ty, wx * win + tx));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(index)
}

fn invert(index: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; index.len()];
    for (i, &src) in index.iter().enumerate() {
        inv[src] = i;
    }
    inv
}

/// Attention output (before the residual) for a normalized input `y`.
pub fn window_attention<T: Scalar>(g: &mut Graph<T>, s: &Scope, y: Var, heads: usize, win: usize) -> Result<Var> {
    let shape = g.shape(y);
    let c = shape.c;
    let index = Rc::new(window_partition_index(shape, heads, win)?);
    let inverse = Rc::new(invert(&index));
    let tokens = Shape::new(shape.numel() / (win * win * c / heads), 1, win * win, c / heads);
    let qkv = conv(g, s, "qkv", y, ConvSpec::same(1))?;
    let mut parts = [None; 3];
    for (i, p) in parts.iter_mut().enumerate() {
        let t = g.narrow_channels(qkv, i * c, c)?;
        *p = Some(g.gather(t, tokens, index.clone())?);
    }
    let [q, k, v] = parts.map(Option::unwrap);
    let a = g.matmul_t(q, k, false, true)?;
    let a = g.scale(a, 1.0 / ((c / heads) as f64).sqrt());
    let a = g.softmax_rows(a);
    let o = g.batched_matmul(a, v)?;
    let o = g.gather(o, shape, inverse)?;
    conv(g, s, "proj_out", o, ConvSpec::same(1))
}
