//! Flat `key=value` training configuration.

use std::fmt;
use std::path::PathBuf;

use crate::error::{config_err, Error, Result};
use crate::image::Family;
use crate::mhdlsa::LocalAttention;
use crate::network::ModelConfig;
use crate::sparsegsa::GlobalAttention;

/// Window used when `local_variant=mhsa` and no explicit `window` is given.
pub const DEFAULT_MHSA_WINDOW: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Dataset {
    /// `family: None` cycles through the single-scene families.
    Synthetic {
        seed: u64,
        count: usize,
        size: usize,
        family: Option<Family>,
    },
    Directory(PathBuf),
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dataset::Synthetic {
                seed,
                count,
                size,
                family: None,
            } => write!(f, "synthetic({seed},{count},{size})"),
            Dataset::Synthetic {
                seed,
                count,
                size,
                family: Some(fam),
            } => write!(f, "synthetic({seed},{count},{size},{fam})"),
            Dataset::Directory(p) => write!(f, "directory({})", p.display()),
        }
    }
}

impl Dataset {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let inner = |tag: &str| {
            s.strip_prefix(tag)
                .and_then(|r| r.strip_prefix('('))
                .and_then(|r| r.strip_suffix(')'))
        };
        if let Some(args) = inner("synthetic") {
            let v: Vec<&str> = args.split(',').map(str::trim).collect();
            let bad = || Error::Config(format!("dataset: expected synthetic(seed,count,size[,family]), got {s:?}"));
            if v.len() != 3 && v.len() != 4 {
                return Err(bad());
            }
            return Ok(Dataset::Synthetic {
                seed: v[0].parse().map_err(|_| bad())?,
                count: v[1].parse().map_err(|_| bad())?,
                size: v[2].parse().map_err(|_| bad())?,
                family: v.get(3).map(|f| f.parse()).transpose()?,
            });
        }
        if let Some(path) = inner("directory") {
            return Ok(Dataset::Directory(PathBuf::from(path.trim())));
        }
        config_err(format!("dataset: expected synthetic(...) or directory(...), got {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch: usize,
    /// LR-space patch side.
    pub patch: usize,
    pub lr0: f64,
    /// Empty means 50%, 75% and 90% of `total_iters`.
    pub milestones: Vec<usize>,
    pub lr_factor: f64,
    pub total_iters: usize,
    pub seed: u64,
    pub dataset: Dataset,
    /// 0 disables periodic evaluation.
    pub eval_interval: usize,
    pub tlc: bool,
    /// LR-space tile side used when `tlc` is set.
    pub tlc_window: usize,
    pub augment: bool,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::tiny(2),
            batch: 16,
            patch: 48,
            lr0: 5e-4,
            milestones: Vec::new(),
            lr_factor: 0.5,
            total_iters: 2000,
            seed: 0,
            dataset: Dataset::Synthetic {
                seed: 0,
                count: 8,
                size: 64,
                family: None,
            },
            eval_interval: 0,
            tlc: false,
            tlc_window: 48,
            augment: true,
            precision: Precision::F32,
        }
    }
}

fn num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => config_err(format!("{key}: expected true or false, got {v:?}")),
    }
}

impl TrainConfig {
    /// Parse `key=value` lines; `#` starts a comment. A `model` preset line is
    /// applied first so individual model fields can override it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = TrainConfig::default();
        let preset = pairs.iter().rev().find(|(k, _)| k == "model").map(|(_, v)| v.clone());
        let scale = match pairs.iter().rev().find(|(k, _)| k == "scale") {
            Some((k, v)) => num(k, v)?,
            None => 2,
        };
        if let Some(p) = preset {
            cfg.model = ModelConfig::by_name(&p, scale)?;
        }
        for (k, v) in &pairs {
            if k != "model" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model" => {
                let scale = self.model.scale;
                self.model = ModelConfig::by_name(value, scale)?;
            }
            "batch" => self.batch = num(key, value)?,
            "patch" => self.patch = num(key, value)?,
            "lr0" => self.lr0 = num(key, value)?,
            "milestones" => {
                self.milestones = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| num(key, s))
                    .collect::<Result<_>>()?
            }
            "lr_factor" => self.lr_factor = num(key, value)?,
            "total_iters" => self.total_iters = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "loss" => {
                if value != "l1" {
                    return config_err(format!("loss: only l1 is supported, got {value:?}"));
                }
            }
            "dataset" => self.dataset = Dataset::parse(value)?,
            "eval_interval" => self.eval_interval = num(key, value)?,
            "tlc" => self.tlc = boolean(key, value)?,
            "tlc_window" => self.tlc_window = num(key, value)?,
            "augment" => self.augment = boolean(key, value)?,
            "precision" => {
                self.precision = match value {
                    "f32" | "32" => Precision::F32,
                    "f64" | "64" => Precision::F64,
                    _ => return config_err(format!("precision: expected f32 or f64, got {value:?}")),
                }
            }
            "attention_variant" => {
                self.model.global = match value {
                    "relu" => GlobalAttention::Relu,
                    "softmax" => GlobalAttention::Softmax,
                    _ => return config_err(format!("attention_variant: expected relu or softmax, got {value:?}")),
                }
            }
            "local_variant" => {
                self.model.local = match (value, self.model.local) {
                    ("mhdlsa", _) => LocalAttention::Dynamic,
                    ("mhsa", LocalAttention::Window(w)) => LocalAttention::Window(w),
                    ("mhsa", LocalAttention::Dynamic) => LocalAttention::Window(DEFAULT_MHSA_WINDOW),
                    _ => return config_err(format!("local_variant: expected mhdlsa or mhsa, got {value:?}")),
                }
            }
            _ => self.model.set(key, value).map_err(|e| match e {
                Error::Config(m) if m.starts_with("unknown model setting") => {
                    Error::Config(format!("unknown key {key:?}"))
                }
                other => other,
            })?,
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch == 0 {
            return config_err("batch must be at least 1");
        }
        if self.patch == 0 {
            return config_err("patch must be positive");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return config_err(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return config_err(format!("lr_factor must be in (0, 1], got {}", self.lr_factor));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return config_err("milestones must be strictly increasing");
        }
        if let Dataset::Synthetic { count, size, .. } = self.dataset {
            if count == 0 {
                return config_err("dataset must hold at least one image");
            }
            if self.patch * self.model.scale > size {
                return config_err(format!(
                    "patch {} x scale {} exceeds the {size}px images",
                    self.patch, self.model.scale
                ));
            }
        }
        if self.tlc && self.tlc_window == 0 {
            return config_err("tlc_window must be positive");
        }
        Ok(())
    }

    pub fn milestones(&self) -> Vec<usize> {
        if !self.milestones.is_empty() {
            return self.milestones.clone();
        }
        let n = self.total_iters;
        let mut m: Vec<usize> = [n / 2, n * 3 / 4, n * 9 / 10].into_iter().filter(|&v| v > 0).collect();
        m.dedup();
        m
    }

    /// Every setting as `key=value` lines; [`TrainConfig::parse`] reads it back.
    pub fn fingerprint(&self) -> String {
        let ms: Vec<String> = self.milestones.iter().map(|m| m.to_string()).collect();
        let precision = match self.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        };
        format!(
            "{}batch={}\npatch={}\nlr0={}\nmilestones={}\nlr_factor={}\ntotal_iters={}\nseed={}\n\
             dataset={}\neval_interval={}\ntlc={}\ntlc_window={}\naugment={}\nprecision={}\n",
            self.model.fingerprint(),
            self.batch,
            self.patch,
            self.lr0,
            ms.join(","),
            self.lr_factor,
            self.total_iters,
            self.seed,
            self.dataset,
            self.eval_interval,
            self.tlc,
            self.tlc_window,
            self.augment,
            precision
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_round_trips() {
        let mut cfg = TrainConfig::default();
        cfg.milestones = vec![10, 20];
        cfg.patch = 12;
        cfg.model.set("variant", "mhdlsa_only").unwrap();
        cfg.dataset = Dataset::Directory("/tmp/x y".into());
        assert_eq!(TrainConfig::parse(&cfg.fingerprint()).unwrap(), cfg);
        cfg.dataset = Dataset::parse("synthetic(3, 2, 64, mosaic)").unwrap();
        assert_eq!(TrainConfig::parse(&cfg.fingerprint()).unwrap(), cfg);
    }

    #[test]
    fn preset_then_overrides() {
        let cfg = TrainConfig::parse("channels=24\nmodel=light\nscale=4\npatch=16\n# note\n").unwrap();
        assert_eq!(cfg.model.num_groups, 4);
        assert_eq!(cfg.model.channels, 24);
        assert_eq!(cfg.model.scale, 4);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(TrainConfig::parse("colour=red"), Err(Error::Config(m)) if m.contains("colour")));
        assert!(TrainConfig::parse("batch=0").is_err());
        assert!(TrainConfig::parse("loss=l2").is_err());
        assert!(TrainConfig::parse("patch=40").is_err());
        assert!(TrainConfig::parse("milestones=5,5").is_err());
        assert!(TrainConfig::parse("just text").is_err());
    }

    #[test]
    fn default_milestones() {
        let cfg = TrainConfig {
            total_iters: 2000,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.milestones(), vec![1000, 1500, 1800]);
    }
}
