//! Fixed small benchmark for comparing block and attention variants.

use std::fmt;
use std::str::FromStr;

use super::config::{Dataset, TrainConfig};
use super::eval::evaluate_bicubic;
use super::trainer::{TrainLog, Trainer};
use crate::error::{Error, Result};
use crate::image::Family;
use crate::network::ModelConfig;
use crate::tensor::Scalar;

/// Tiny model, eight 64x64 block images, x2, 2000 iterations.
pub fn frozen_benchmark() -> TrainConfig {
    TrainConfig {
        model: ModelConfig::tiny(2),
        batch: 4,
        patch: 16,
        lr0: 1e-3,
        milestones: Vec::new(),
        lr_factor: 0.5,
        total_iters: 2000,
        seed: 7,
        dataset: Dataset::Synthetic {
            seed: 1000,
            count: 8,
            size: 64,
            family: Some(Family::Blocks),
        },
        eval_interval: 0,
        augment: true,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    /// Hybrid block against its two single-mechanism variants.
    Hdtb,
    /// ReLU against softmax global attention.
    Attention,
    /// Dynamic local attention against windowed self-attention.
    Local,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hdtb" => Ok(Suite::Hdtb),
            "attention" => Ok(Suite::Attention),
            "local" => Ok(Suite::Local),
            _ => Err(Error::Usage(format!("unknown suite {s:?} (hdtb, attention, local)"))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Hdtb => "hdtb",
            Suite::Attention => "attention",
            Suite::Local => "local",
        })
    }
}

impl Suite {
    /// Labelled configurations derived from `base`.
    pub fn variants(self, base: &TrainConfig) -> Result<Vec<(String, TrainConfig)>> {
        let settings: &[(&str, &str, &str)] = match self {
            Suite::Hdtb => &[
                ("hybrid", "variant", "hybrid"),
                ("mhdlsa_only", "variant", "mhdlsa_only"),
                ("sparsegsa_only", "variant", "sparsegsa_only"),
            ],
            Suite::Attention => &[("relu", "attention_variant", "relu"), ("softmax", "attention_variant", "softmax")],
            Suite::Local => &[("mhdlsa", "local_variant", "mhdlsa"), ("mhsa", "local_variant", "mhsa")],
        };
        settings
            .iter()
            .map(|&(label, k, v)| {
                let mut cfg = base.clone();
                cfg.set(k, v)?;
                cfg.validate()?;
                Ok((label.to_string(), cfg))
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub label: String,
    pub config: TrainConfig,
    pub train_psnr: f64,
    pub bicubic_psnr: f64,
    pub log: TrainLog,
}

impl fmt::Display for AblationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<16} train psnr {:>7.3} dB  bicubic {:>7.3} dB  final loss {:.5}",
            self.label,
            self.train_psnr,
            self.bicubic_psnr,
            self.log.losses.last().copied().unwrap_or(f64::NAN)
        )
    }
}

/// Train one configuration to completion and score it on its training set.
pub fn run_variant<T: Scalar>(
    label: &str,
    cfg: TrainConfig,
    progress: impl FnMut(usize, f64, Option<f64>),
) -> Result<AblationResult> {
    let mut trainer = Trainer::<T>::new(cfg.clone())?;
    let log = trainer.run(progress)?;
    let report = trainer.evaluate();
    let bicubic = evaluate_bicubic(trainer.images(), cfg.model.scale);
    Ok(AblationResult {
        label: label.to_string(),
        config: cfg,
        train_psnr: report.mean_psnr(),
        bicubic_psnr: bicubic.mean_psnr(),
        log,
    })
}

pub fn run_suite<T: Scalar>(
    suite: Suite,
    base: &TrainConfig,
    mut progress: impl FnMut(&str, usize, f64, Option<f64>),
) -> Result<Vec<AblationResult>> {
    suite
        .variants(base)?
        .into_iter()
        .map(|(label, cfg)| run_variant::<T>(&label, cfg, |i, l, p| progress(&label, i, l, p)))
        .collect()
}
