//! Hybrid blocks, residual groups, and the full super-resolution network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Error, Result};
use crate::layers::{conv, init_conv};
use crate::mhdlsa::{init_mhdlsa, mhdlsa_block, LocalAttention, MhdlsaConfig};
use crate::params::{Bindings, Init, ParamStore, Scope};
use crate::sparsegsa::{init_sparsegsa, sparsegsa_block, sparsegsa_tlc, GlobalAttention, SparseGsaConfig};
use crate::tensor::{ConvSpec, Graph, PadMode, Scalar, Tensor, Var};

/// Composition of one hybrid block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockVariant {
    /// Local attention then global attention.
    Hybrid,
    /// Two local-attention blocks.
    MhdlsaOnly,
    /// Two global-attention blocks.
    SparseGsaOnly,
}

impl BlockVariant {
    pub fn name(self) -> &'static str {
        match self {
            BlockVariant::Hybrid => "hybrid",
            BlockVariant::MhdlsaOnly => "mhdlsa_only",
            BlockVariant::SparseGsaOnly => "sparsegsa_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [BlockVariant::Hybrid, BlockVariant::MhdlsaOnly, BlockVariant::SparseGsaOnly]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown block variant {s:?}")))
    }

    /// The two sub-blocks as `(name, is_local)`.
    pub(crate) fn stages(self) -> [(&'static str, bool); 2] {
        match self {
            BlockVariant::Hybrid => [("local", true), ("global", false)],
            BlockVariant::MhdlsaOnly => [("local", true), ("local2", true)],
            BlockVariant::SparseGsaOnly => [("global", false), ("global2", false)],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_groups: usize,
    pub blocks_per_group: usize,
    pub channels: usize,
    pub heads: usize,
    pub scale: usize,
    pub kernel: usize,
    pub gamma: f64,
    pub ffn_ratio: f64,
    pub variant: BlockVariant,
    pub local: LocalAttention,
    pub global: GlobalAttention,
    pub pad: PadMode,
}

impl ModelConfig {
    fn preset(num_groups: usize, blocks_per_group: usize, channels: usize, scale: usize) -> Self {
        ModelConfig {
            in_channels: 3,
            num_groups,
            blocks_per_group,
            channels,
            heads: 6,
            scale,
            kernel: 3,
            gamma: 0.5,
            ffn_ratio: 2.66,
            variant: BlockVariant::Hybrid,
            local: LocalAttention::Dynamic,
            global: GlobalAttention::Relu,
            pad: PadMode::Zero,
        }
    }

    pub fn full(scale: usize) -> Self {
        Self::preset(6, 4, 90, scale)
    }

    pub fn light(scale: usize) -> Self {
        Self::preset(4, 3, 48, scale)
    }

    pub fn tiny(scale: usize) -> Self {
        Self::preset(3, 3, 48, scale)
    }

    pub fn by_name(name: &str, scale: usize) -> Result<Self> {
        match name {
            "full" => Ok(Self::full(scale)),
            "light" => Ok(Self::light(scale)),
            "tiny" => Ok(Self::tiny(scale)),
            _ => config_err(format!("unknown model preset {name:?} (full, light, tiny)")),
        }
    }

    pub fn mhdlsa(&self) -> MhdlsaConfig {
        MhdlsaConfig {
            channels: self.channels,
            heads: self.heads,
            kernel: self.kernel,
            gamma: self.gamma,
            ffn_expansion: self.ffn_ratio,
            pad: self.pad,
            local: self.local,
        }
    }

    pub fn sparsegsa(&self) -> SparseGsaConfig {
        SparseGsaConfig {
            channels: self.channels,
            heads: self.heads,
            ffn_expansion: self.ffn_ratio,
            pad: self.pad,
            attention: self.global,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("num_groups", self.num_groups),
            ("blocks_per_group", self.blocks_per_group),
            ("channels", self.channels),
            ("heads", self.heads),
        ];
        for (field, v) in positive {
            if v == 0 {
                return config_err(format!("{field} must be positive"));
            }
        }
        if !(2..=4).contains(&self.scale) {
            return config_err(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        if self.channels % self.heads != 0 {
            return config_err(format!(
                "channels ({}) must be divisible by heads ({})",
                self.channels, self.heads
            ));
        }
        if self.kernel % 2 == 0 {
            return config_err(format!("kernel must be odd, got {}", self.kernel));
        }
        self.mhdlsa().validate()?;
        self.sparsegsa().validate()
    }

    /// Every field as `key=value`, one per line, in a fixed order.
    pub fn fingerprint(&self) -> String {
        let window = match self.local {
            LocalAttention::Dynamic => 0,
            LocalAttention::Window(w) => w,
        };
        let global = match self.global {
            GlobalAttention::Relu => "relu",
            GlobalAttention::Softmax => "softmax",
        };
        let pad = match self.pad {
            PadMode::Zero => "zero",
            PadMode::Reflect => "reflect",
            PadMode::Circular => "circular",
        };
        format!(
            "in_channels={}\nnum_groups={}\nblocks_per_group={}\nchannels={}\nheads={}\nscale={}\n\
             kernel={}\ngamma={}\nffn_ratio={}\nvariant={}\nwindow={}\nglobal={}\npad={}\n",
            self.in_channels,
            self.num_groups,
            self.blocks_per_group,
            self.channels,
            self.heads,
            self.scale,
            self.kernel,
            self.gamma,
            self.ffn_ratio,
            self.variant.name(),
            window,
            global,
            pad
        )
    }

    /// Apply one `key=value` setting, using the names of [`Self::fingerprint`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "in_channels" => self.in_channels = num(key, value)?,
            "num_groups" => self.num_groups = num(key, value)?,
            "blocks_per_group" => self.blocks_per_group = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "scale" => self.scale = num(key, value)?,
            "kernel" => self.kernel = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "ffn_ratio" => self.ffn_ratio = num(key, value)?,
            "variant" => self.variant = BlockVariant::parse(value)?,
            "window" => {
                let w: usize = num(key, value)?;
                self.local = if w == 0 {
                    LocalAttention::Dynamic
                } else {
                    LocalAttention::Window(w)
                };
            }
            "global" => {
                self.global = match value {
                    "relu" => GlobalAttention::Relu,
                    "softmax" => GlobalAttention::Softmax,
                    _ => return config_err(format!("global: unknown attention {value:?}")),
                }
            }
            "pad" => {
                self.pad = match value {
                    "zero" => PadMode::Zero,
                    "reflect" => PadMode::Reflect,
                    "circular" => PadMode::Circular,
                    _ => return config_err(format!("pad: unknown mode {value:?}")),
                }
            }
            _ => return config_err(format!("unknown model setting {key:?}")),
        }
        Ok(())
    }

    /// Parse the output of [`Self::fingerprint`].
    pub fn from_fingerprint(text: &str) -> Result<Self> {
        let mut cfg = Self::tiny(2);
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed config line {line:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn block_prefix(group: usize, block: usize) -> String {
    format!("groups.{group}.blocks.{block}")
}

/// One hybrid block under scope `s` (names `local`, `global`, ...).
pub fn hdtb_forward<T: Scalar>(g: &mut Graph<T>, s: &Scope, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let (lc, gc) = (cfg.mhdlsa(), cfg.sparsegsa());
    let mut x = x;
    for (name, local) in cfg.variant.stages() {
        x = if local {
            mhdlsa_block(g, &s.at(name), &lc, x)?
        } else {
            sparsegsa_block(g, &s.at(name), &gc, x)?
        };
    }
    Ok(x)
}

/// Blocks, a trailing 3x3 conv, and the group residual.
pub fn rhdtg_forward<T: Scalar>(g: &mut Graph<T>, s: &Scope, cfg: &ModelConfig, z0: Var) -> Result<Var> {
    let mut z = z0;
    for j in 0..cfg.blocks_per_group {
        z = hdtb_forward(g, &s.at(&format!("blocks.{j}")), cfg, z)?;
    }
    let z = conv(g, s, "conv", z, ConvSpec::same(3).with_mode(cfg.pad))?;
    g.add(z, z0)
}

/// All residual groups in sequence, without the long skip.
pub fn group_stack_forward<T: Scalar>(g: &mut Graph<T>, b: &Bindings, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let mut z = x;
    for i in 0..cfg.num_groups {
        z = rhdtg_forward(g, &b.scope(&format!("groups.{i}")), cfg, z)?;
    }
    Ok(z)
}

fn check_input(cfg: &ModelConfig, s: crate::tensor::Shape) -> Result<()> {
    if s.c != cfg.in_channels {
        return Err(Error::Usage(format!(
            "model expects {} input channels, got {}",
            cfg.in_channels, s.c
        )));
    }
    let min = cfg.kernel.max(3);
    if s.h < min || s.w < min {
        return Err(Error::Usage(format!(
            "input {}x{} is smaller than the {min}x{min} minimum",
            s.w, s.h
        )));
    }
    if let LocalAttention::Window(w) = cfg.local {
        if s.h % w != 0 || s.w % w != 0 {
            return Err(Error::Usage(format!(
                "input {}x{} is not a multiple of the attention window {w}",
                s.w, s.h
            )));
        }
    }
    Ok(())
}

/// Head conv, residual groups with the long skip, tail conv, pixel shuffle.
pub fn model_forward<T: Scalar>(g: &mut Graph<T>, b: &Bindings, cfg: &ModelConfig, x: Var) -> Result<Var> {
    check_input(cfg, g.shape(x))?;
    let root = b.scope("");
    let spec = ConvSpec::same(3).with_mode(cfg.pad);
    let f = conv(g, &root, "head", x, spec)?;
    let z = group_stack_forward(g, b, cfg, f)?;
    let z = g.add(z, f)?;
    let y = conv(g, &root, "tail", z, spec)?;
    g.pixel_shuffle(y, cfg.scale)
}

/// A configuration plus its named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DlgsaNet<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

/// Initialize every parameter deterministically from `seed`.
pub fn build_model<T: Scalar>(config: ModelConfig, seed: u64) -> Result<DlgsaNet<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let (c, cin) = (config.channels, config.in_channels);
    init_conv(&mut p, "head", c, cin, 3, Init::FanInUniform, true, &mut rng);
    let (lc, gc) = (config.mhdlsa(), config.sparsegsa());
    for i in 0..config.num_groups {
        for j in 0..config.blocks_per_group {
            let prefix = block_prefix(i, j);
            for (name, local) in config.variant.stages() {
                let sub = format!("{prefix}.{name}");
                if local {
                    init_mhdlsa(&mut p, &sub, &lc, &mut rng)?;
                } else {
                    init_sparsegsa(&mut p, &sub, &gc, &mut rng)?;
                }
            }
        }
        init_conv(&mut p, &format!("groups.{i}.conv"), c, c, 3, Init::Zeros, true, &mut rng);
    }
    // Bias-free, so changing the scale changes only the tail weight.
    let out = cin * config.scale * config.scale;
    init_conv(&mut p, "tail", out, c, 3, Init::FanInUniform, false, &mut rng);
    Ok(DlgsaNet { config, params: p })
}

impl<T: Scalar> DlgsaNet<T> {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        build_model(config, seed)
    }

    /// Attach trained weights, checking names and shapes against a fresh build.
    pub fn with_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let fresh = build_model::<T>(config, 0)?;
        let mismatch = fresh.params.len() != params.len()
            || fresh
                .params
                .iter()
                .zip(params.iter())
                .any(|((a, x), (b, y))| a != b || x.shape() != y.shape());
        if mismatch {
            return config_err("weights do not match the model configuration");
        }
        Ok(DlgsaNet {
            config: fresh.config,
            params,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    /// Bind the parameters and run the network on `x`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, trainable: bool) -> Result<(Var, Bindings)> {
        let b = self.params.bind(g, trainable);
        let y = model_forward(g, &b, &self.config, x)?;
        Ok((y, b))
    }

    /// Inference without gradients. Each stage runs in its own short-lived
    /// graph; with `tlc = Some(win)` every global-attention block is evaluated
    /// on `win x win` tiles.
    pub fn infer(&self, x: &Tensor<T>, tlc: Option<usize>) -> Result<Tensor<T>> {
        let cfg = &self.config;
        check_input(cfg, x.shape())?;
        let spec = ConvSpec::same(3).with_mode(cfg.pad);
        let stage = |prefix: &str, input: &Tensor<T>, f: &dyn Fn(&mut Graph<T>, &Scope, Var) -> Result<Var>| {
            let mut g = Graph::new();
            let b = self.params.bind_prefix(&mut g, prefix, false);
            let xv = g.input(input.clone());
            let y = f(&mut g, &b.scope(prefix), xv)?;
            Ok::<_, Error>(g.value(y).clone())
        };
        let head = {
            let mut g = Graph::new();
            let b = self.params.bind_prefix(&mut g, "head", false);
            let xv = g.input(x.clone());
            let y = conv(&mut g, &b.scope(""), "head", xv, spec)?;
            g.value(y).clone()
        };
        let (lc, gc) = (cfg.mhdlsa(), cfg.sparsegsa());
        let mut z = head.clone();
        for i in 0..cfg.num_groups {
            let z0 = z.clone();
            for j in 0..cfg.blocks_per_group {
                for (name, local) in cfg.variant.stages() {
                    let prefix = format!("{}.{name}", block_prefix(i, j));
                    z = match (local, tlc) {
                        (true, _) => stage(&prefix, &z, &|g, s, v| mhdlsa_block(g, s, &lc, v))?,
                        (false, Some(win)) => sparsegsa_tlc(&self.params, &prefix, &gc, &z, win)?,
                        (false, None) => stage(&prefix, &z, &|g, s, v| sparsegsa_block(g, s, &gc, v))?,
                    };
                }
            }
            let mut g = Graph::new();
            let b = self.params.bind_prefix(&mut g, &format!("groups.{i}.conv"), false);
            let (zv, z0v) = (g.input(z), g.input(z0));
            let y = conv(&mut g, &b.scope(&format!("groups.{i}")), "conv", zv, spec)?;
            let y = g.add(y, z0v)?;
            z = g.value(y).clone();
        }
        let mut g = Graph::new();
        let b = self.params.bind_prefix(&mut g, "tail", false);
        let (zv, hv) = (g.input(z), g.input(head));
        let s = g.add(zv, hv)?;
        let y = conv(&mut g, &b.scope(""), "tail", s, spec)?;
        let y = g.pixel_shuffle(y, cfg.scale)?;
        Ok(g.value(y).clone())
    }
}
