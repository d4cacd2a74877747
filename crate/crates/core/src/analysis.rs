//! Static parameter and multiply-accumulate accounting.
//!
//! One multiply-accumulate counts as one FLOP. Normalization, activations,
//! and elementwise arithmetic are not counted.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mhdlsa::{ffn_hidden, LocalAttention, GENERATOR_DW};
use crate::network::{block_prefix, ModelConfig};
use crate::params::join;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Conv { cout: usize, cin_per_group: usize, k: usize, bias: bool },
    Norm { c: usize },
    /// Free parameters that take part in no multiply-accumulate.
    Vector { len: usize },
    DynamicAggregate { c: usize, k: usize },
    ChannelAttention { c: usize, heads: usize },
    WindowAttention { c: usize, win: usize },
}

impl Kind {
    fn params(self) -> u64 {
        match self {
            Kind::Conv { cout, cin_per_group, k, bias } => (cout * cin_per_group * k * k + if bias { cout } else { 0 }) as u64,
            Kind::Norm { c } => 2 * c as u64,
            Kind::Vector { len } => len as u64,
            _ => 0,
        }
    }

    /// MACs at `pixels` feature-map positions.
    fn macs(self, pixels: u64) -> u64 {
        let p = pixels;
        match self {
            Kind::Conv { cout, cin_per_group, k, .. } => p * (cout * cin_per_group * k * k) as u64,
            Kind::Norm { .. } | Kind::Vector { .. } => 0,
            Kind::DynamicAggregate { c, k } => p * (c * k * k) as u64,
            // Q K^T and A V, each (c/heads)^2 * hw per head.
            Kind::ChannelAttention { c, heads } => 2 * p * (c * c / heads) as u64,
            // Q K^T and A V, each win^2 * d per token per head.
            Kind::WindowAttention { c, win } => 2 * p * (win * win * c) as u64,
        }
    }
}

/// Every layer runs at the network (LR) resolution; the final pixel shuffle
/// is a permutation.
struct Layer {
    name: String,
    kind: Kind,
}

fn conv(name: String, cout: usize, cin_per_group: usize, k: usize, bias: bool) -> Layer {
    Layer {
        name,
        kind: Kind::Conv { cout, cin_per_group, k, bias },
    }
}

fn other(name: String, kind: Kind) -> Layer {
    Layer { name, kind }
}

fn ffn_layers(out: &mut Vec<Layer>, prefix: &str, c: usize, hidden: usize) {
    let n = |s: &str| join(prefix, s);
    out.push(other(n("norm"), Kind::Norm { c }));
    out.push(conv(n("proj_in"), 2 * hidden, c, 1, true));
    out.push(conv(n("dw"), 2 * hidden, 1, 3, true));
    out.push(conv(n("proj_out"), c, hidden, 1, true));
}

fn layers(cfg: &ModelConfig) -> Result<Vec<Layer>> {
    cfg.validate()?;
    let c = cfg.channels;
    let hidden = ffn_hidden(c, cfg.ffn_ratio)?;
    let mut out = vec![conv("head".into(), c, cfg.in_channels, 3, true)];
    for i in 0..cfg.num_groups {
        for j in 0..cfg.blocks_per_group {
            let block = block_prefix(i, j);
            for (stage, local) in cfg.variant.stages() {
                let p = format!("{block}.{stage}");
                let n = |s: &str| join(&p, s);
                out.push(other(n("norm"), Kind::Norm { c }));
                if local {
                    match cfg.local {
                        LocalAttention::Dynamic => {
                            let sq = cfg.mhdlsa().squeezed()?;
                            let taps = cfg.heads * cfg.kernel * cfg.kernel;
                            out.push(conv(n("proj_in"), c, c, 1, true));
                            out.push(conv(n("gen.squeeze"), sq, c, 1, false));
                            out.push(conv(n("gen.dw"), sq, 1, GENERATOR_DW, false));
                            out.push(conv(n("gen.expand"), taps, sq, 1, false));
                            out.push(other(n("aggregate"), Kind::DynamicAggregate { c, k: cfg.kernel }));
                        }
                        LocalAttention::Window(win) => {
                            out.push(conv(n("qkv"), 3 * c, c, 1, true));
                            out.push(other(n("attention"), Kind::WindowAttention { c, win }));
                            out.push(conv(n("proj_out"), c, c, 1, true));
                        }
                    }
                } else {
                    out.push(conv(n("qkv"), 3 * c, c, 1, true));
                    out.push(conv(n("qkv_dw"), 3 * c, 1, 3, true));
                    out.push(other(n("log_alpha"), Kind::Vector { len: cfg.heads }));
                    out.push(other(n("attention"), Kind::ChannelAttention { c, heads: cfg.heads }));
                    out.push(conv(n("proj_out"), c, c, 1, true));
                }
                ffn_layers(&mut out, &n("ffn"), c, hidden);
            }
        }
        out.push(conv(format!("groups.{i}.conv"), c, c, 3, true));
    }
    out.push(conv("tail".into(), cfg.in_channels * cfg.scale * cfg.scale, c, 3, false));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostRow {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub config: ModelConfig,
    /// Output `(width, height)` the MACs refer to; `None` for parameter-only reports.
    pub resolution: Option<(usize, usize)>,
    /// Network (LR) feature-map size used for MACs.
    pub lr_size: Option<(usize, usize)>,
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_macs: u64,
}

fn report(config: &ModelConfig, sizes: Option<((usize, usize), (usize, usize))>) -> Result<CostReport> {
    let layers = layers(config)?;
    let lr_px = sizes.map_or(0, |(_, (lw, lh))| (lw * lh) as u64);
    let rows: Vec<CostRow> = layers
        .into_iter()
        .map(|l| CostRow {
            params: l.kind.params(),
            macs: l.kind.macs(lr_px),
            name: l.name,
        })
        .collect();
    Ok(CostReport {
        config: config.clone(),
        resolution: sizes.map(|s| s.0),
        lr_size: sizes.map(|s| s.1),
        total_params: rows.iter().map(|r| r.params).sum(),
        total_macs: rows.iter().map(|r| r.macs).sum(),
        rows,
    })
}

/// Analytic parameter count, per layer.
pub fn count_params(config: &ModelConfig) -> Result<CostReport> {
    report(config, None)
}

/// MACs for producing an `out_w x out_h` image. Both sides must be multiples
/// of the scale.
pub fn count_macs(config: &ModelConfig, out_w: usize, out_h: usize) -> Result<CostReport> {
    let s = config.scale;
    if out_w == 0 || out_h == 0 || out_w % s != 0 || out_h % s != 0 {
        return Err(Error::Usage(format!(
            "output {out_w}x{out_h} is not a positive multiple of scale {s}"
        )));
    }
    report(config, Some(((out_w, out_h), (out_w / s, out_h / s))))
}

/// As [`count_macs`], but an output side that is not a multiple of the scale
/// is served by the smallest LR side that covers it (`ceil(side / scale)`).
pub fn count_macs_ceil(config: &ModelConfig, out_w: usize, out_h: usize) -> Result<CostReport> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Usage(format!("output {out_w}x{out_h} must be positive")));
    }
    let s = config.scale;
    report(config, Some(((out_w, out_h), (out_w.div_ceil(s), out_h.div_ceil(s)))))
}

fn millions(v: u64) -> f64 {
    v as f64 / 1e6
}

fn giga(v: u64) -> f64 {
    v as f64 / 1e9
}

impl CostReport {
    fn header(&self) -> String {
        let c = &self.config;
        let mut h = format!(
            "# x{} groups={} blocks={} channels={} heads={} | K={} gamma={} e={} | variant={}\n",
            c.scale, c.num_groups, c.blocks_per_group, c.channels, c.heads, c.kernel, c.gamma, c.ffn_ratio,
            c.variant.name()
        );
        match (self.resolution, self.lr_size) {
            (Some((w, h2)), Some((lw, lh))) => {
                let _ = writeln!(h, "# MACs for a {w}x{h2} output ({lw}x{lh} network input); 1 MAC = 1 FLOP");
            }
            _ => h.push_str("# parameters only\n"),
        }
        h
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
        let mut out = self.header();
        let _ = writeln!(out, "{:<width$} {:>12} {:>16}", "layer", "params", "macs");
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$} {:>12} {:>16}", r.name, r.params, r.macs);
        }
        let _ = writeln!(out, "{:<width$} {:>12} {:>16}", "total", self.total_params, self.total_macs);
        let _ = write!(out, "# {:.3} M params", millions(self.total_params));
        if self.resolution.is_some() {
            let _ = write!(out, ", {:.1} G MACs", giga(self.total_macs));
        }
        out.push('\n');
        out
    }

    /// `name,params,macs` rows with the totals last.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,params,macs\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.name, r.params, r.macs);
        }
        let _ = writeln!(out, "total,{},{}", self.total_params, self.total_macs);
        out
    }
}

/// Totals over `K in {3, 5}`, `gamma in {1/4, 1/2, 1}`, `e in {2, 2.66}` with
/// every other field of `base` fixed. The split width is `round(gamma * C)`,
/// at least one, and the reported gamma is that width over `C`.
pub fn sensitivity(base: &ModelConfig, out_w: usize, out_h: usize) -> Result<Vec<(usize, f64, f64, u64, u64)>> {
    let mut rows = Vec::new();
    for k in [3, 5] {
        for gamma in [0.25, 0.5, 1.0] {
            for e in [2.0, 2.66] {
                // gamma * C is rounded to a whole number of generator channels.
                let width = (gamma * base.channels as f64).round().max(1.0);
                let cfg = ModelConfig {
                    kernel: k,
                    gamma: width / base.channels as f64,
                    ffn_ratio: e,
                    ..base.clone()
                };
                let r = count_macs_ceil(&cfg, out_w, out_h)?;
                rows.push((k, gamma, e, r.total_params, r.total_macs));
            }
        }
    }
    Ok(rows)
}

pub fn sensitivity_text(base: &ModelConfig, out_w: usize, out_h: usize) -> Result<String> {
    let mut out = format!("# sensitivity at {out_w}x{out_h}, x{}\n", base.scale);
    let _ = writeln!(out, "{:>3} {:>6} {:>5} {:>6} {:>12} {:>12}", "K", "gamma", "width", "e", "params(M)", "MACs(G)");
    for (k, g, e, p, m) in sensitivity(base, out_w, out_h)? {
        let width = (g * base.channels as f64).round().max(1.0);
        let _ = writeln!(out, "{k:>3} {g:>6} {width:>5} {e:>6} {:>12.3} {:>12.1}", millions(p), giga(m));
    }
    Ok(out)
}

/// MACs of the EDSR reference network (32 residual blocks of two 3x3 convs
/// at 256 channels, a body conv, and an upsampler of conv + shuffle stages)
/// for an `out_w x out_h` output at scale 2, 3 or 4. Used to pin the MAC
/// convention against published figures.
pub fn edsr_macs(out_w: usize, out_h: usize, scale: usize) -> Result<u64> {
    if !(2..=4).contains(&scale) || out_w % scale != 0 || out_h % scale != 0 {
        return Err(Error::Usage(format!("edsr: {out_w}x{out_h} at x{scale} is not supported")));
    }
    let (c, k2) = (256u64, 9u64);
    let lr = (out_w / scale * out_h / scale) as u64;
    let hr = (out_w * out_h) as u64;
    let head = lr * 3 * c * k2;
    let body = 65 * lr * c * c * k2;
    let up = match scale {
        2 | 3 => {
            let r2 = (scale * scale) as u64;
            lr * c * r2 * c * k2
        }
        _ => lr * c * 4 * c * k2 + 4 * lr * c * 4 * c * k2,
    };
    let tail = hr * c * 3 * k2;
    Ok(head + body + up + tail)
}
