//! Training, evaluation, checkpoints, and ablation runs.

mod ablation;
mod checkpoint;
mod config;
mod data;
mod eval;
mod optim;
mod trainer;

pub use ablation::{frozen_benchmark, run_suite, run_variant, AblationResult, Suite};
pub use checkpoint::{checkpoint_config, Checkpoint};
pub use config::{Dataset, Precision, TrainConfig, DEFAULT_MHSA_WINDOW};
pub use data::{degrade, dihedral, load_images, make_pairs, mod_crop, sample_batch, Pair};
pub use eval::{evaluate, evaluate_bicubic, score, EvalReport, ImageScore};
pub use optim::{lr_multistep, Adam, ADAM_EPS, BETA1, BETA2};
pub use trainer::{TrainLog, Trainer};
