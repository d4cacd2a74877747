//! Multi-head dynamic local self-attention: per-pixel kernels regressed from
//! the features by a linear squeeze/depthwise/expand stack, applied as a
//! grouped dynamic depthwise convolution, followed by a gated FFN.

use rand::Rng;

use crate::error::{config_err, Result};
use crate::layers::{conv, depthwise, init_conv, init_norm, norm, PROJ_STD};
use crate::params::{join, Init, ParamStore, Scope};
use crate::tensor::{ConvSpec, Graph, PadMode, Scalar, Var};
use crate::window;

/// Kernel size of the depthwise stage of the kernel generator.
pub const GENERATOR_DW: usize = 7;

/// Which local mixing operator a block uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LocalAttention {
    Dynamic,
    /// Softmax self-attention inside non-overlapping square windows.
    Window(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MhdlsaConfig {
    pub channels: usize,
    pub heads: usize,
    pub kernel: usize,
    pub gamma: f64,
    pub ffn_expansion: f64,
    pub pad: PadMode,
    pub local: LocalAttention,
}

impl MhdlsaConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0 || self.heads == 0 || c % self.heads != 0 {
            return config_err(format!("{c} channels do not split into {} heads", self.heads));
        }
        if self.kernel % 2 == 0 {
            return config_err(format!("dynamic kernel size {} is not odd", self.kernel));
        }
        self.squeezed()?;
        ffn_hidden(c, self.ffn_expansion)?;
        if let LocalAttention::Window(0) = self.local {
            return config_err("attention window must be positive");
        }
        Ok(())
    }

    /// Width of the generator's squeezed representation, `gamma * C`.
    pub fn squeezed(&self) -> Result<usize> {
        let v = self.gamma * self.channels as f64;
        let r = v.round();
        if !(r >= 1.0 && (v - r).abs() < 1e-9) {
            return config_err(format!(
                "gamma {} times {} channels is not a positive integer",
                self.gamma, self.channels
            ));
        }
        Ok(r as usize)
    }

    pub fn ffn_hidden(&self) -> usize {
        ffn_hidden(self.channels, self.ffn_expansion).unwrap_or(0)
    }
}

/// Hidden width `floor(C * e)` of the gated FFN.
pub fn ffn_hidden(channels: usize, expansion: f64) -> Result<usize> {
    let h = (channels as f64 * expansion).floor();
    if !(h >= 1.0) {
        return config_err(format!("FFN expansion {expansion} leaves no hidden channels"));
    }
    Ok(h as usize)
}

pub fn init_gated_ffn<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    channels: usize,
    hidden: usize,
    rng: &mut R,
) {
    let n = |s: &str| join(prefix, s);
    init_norm(store, &n("norm"), channels, rng);
    init_conv(store, &n("proj_in"), 2 * hidden, channels, 1, Init::TruncNormal(PROJ_STD), true, rng);
    init_conv(store, &n("dw"), 2 * hidden, 1, 3, Init::FanInUniform, true, rng);
    init_conv(store, &n("proj_out"), channels, hidden, 1, Init::Zeros, true, rng);
}

/// `x + proj_out(gelu(a) * b)` where `[a, b]` is the depthwise-filtered
/// expansion of `layer_norm(x)`.
pub fn gated_ffn<T: Scalar>(g: &mut Graph<T>, s: &Scope, x: Var, pad: PadMode) -> Result<Var> {
    let y = norm(g, s, "norm", x)?;
    let y = conv(g, s, "proj_in", y, ConvSpec::same(1))?;
    let y = depthwise(g, s, "dw", y, pad)?;
    let y = g.gated_gelu(y)?;
    let y = conv(g, s, "proj_out", y, ConvSpec::same(1))?;
    g.add(x, y)
}

pub fn init_mhdlsa<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    cfg: &MhdlsaConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let n = |s: &str| join(prefix, s);
    let c = cfg.channels;
    init_norm(store, &n("norm"), c, rng);
    match cfg.local {
        LocalAttention::Dynamic => {
            let sq = cfg.squeezed()?;
            let taps = cfg.heads * cfg.kernel * cfg.kernel;
            let tn = Init::TruncNormal(PROJ_STD);
            init_conv(store, &n("proj_in"), c, c, 1, tn, true, rng);
            // The generator is bias-free so the kernel field is linear in its input.
            init_conv(store, &n("gen.squeeze"), sq, c, 1, tn, false, rng);
            init_conv(store, &n("gen.dw"), sq, 1, GENERATOR_DW, Init::FanInUniform, false, rng);
            init_conv(store, &n("gen.expand"), taps, sq, 1, Init::Zeros, false, rng);
        }
        LocalAttention::Window(_) => window::init_window_attention(store, prefix, c, rng),
    }
    init_gated_ffn(store, &n("ffn"), c, cfg.ffn_hidden(), rng);
    Ok(())
}

/// Kernel field `[n, heads * k * k, h, w]` for an already normalized and
/// projected feature map. No nonlinearity anywhere.
pub fn generate_dynamic_weights<T: Scalar>(
    g: &mut Graph<T>,
    s: &Scope,
    y: Var,
    pad: PadMode,
) -> Result<Var> {
    let z = conv(g, s, "gen.squeeze", y, ConvSpec::same(1))?;
    let z = depthwise(g, s, "gen.dw", z, pad)?;
    conv(g, s, "gen.expand", z, ConvSpec::same(1))
}

/// Local attention with its residual, then the gated FFN.
pub fn mhdlsa_block<T: Scalar>(g: &mut Graph<T>, s: &Scope, cfg: &MhdlsaConfig, x: Var) -> Result<Var> {
    let y = norm(g, s, "norm", x)?;
    let z = match cfg.local {
        LocalAttention::Dynamic => {
            let y = conv(g, s, "proj_in", y, ConvSpec::same(1))?;
            let kernels = generate_dynamic_weights(g, s, y, cfg.pad)?;
            g.dynamic_local_aggregate(kernels, y, cfg.heads, cfg.kernel, cfg.pad)?
        }
        LocalAttention::Window(win) => window::window_attention(g, s, y, cfg.heads, win)?,
    };
    let x = g.add(x, z)?;
    gated_ffn(g, &s.at("ffn"), x, cfg.pad)
}
