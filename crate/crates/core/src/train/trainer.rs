//! The optimization loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::data::{load_images, make_pairs, sample_batch, Pair};
use super::eval::{evaluate, EvalReport};
use super::optim::{lr_multistep, Adam};
use crate::error::{Error, Result};
use crate::image::ImageRGB8;
use crate::network::{build_model, DlgsaNet};
use crate::tensor::{Graph, Scalar};

/// Separates the sampling stream from the weight-initialization stream.
const SAMPLER_SALT: u64 = 0x5eed_5a3b_1e00_0001;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Loss before each update, indexed by iteration.
    pub losses: Vec<f64>,
    /// `(iteration, mean train-set PSNR)` at each evaluation point.
    pub evals: Vec<(usize, f64)>,
}

pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: DlgsaNet<T>,
    pub adam: Adam<T>,
    pub iteration: usize,
    rng: ChaCha8Rng,
    images: Vec<(String, ImageRGB8)>,
    pairs: Vec<Pair<T>>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let images = load_images(&config.dataset)?;
        Self::with_images(config, images)
    }

    pub fn with_images(config: TrainConfig, images: Vec<(String, ImageRGB8)>) -> Result<Self> {
        config.validate()?;
        let model = build_model(config.model.clone(), config.seed)?;
        let adam = Adam::new(&model.params);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ SAMPLER_SALT);
        let pairs = make_pairs(&images, config.model.scale)?;
        Ok(Trainer {
            config,
            model,
            adam,
            iteration: 0,
            rng,
            images,
            pairs,
        })
    }

    /// Restore a snapshot; the dataset is reloaded from the stored config.
    pub fn from_checkpoint(ck: Checkpoint<T>) -> Result<Self> {
        let images = load_images(&ck.config.dataset)?;
        let mut t = Self::with_images(ck.config, images)?;
        t.model = DlgsaNet::with_params(t.config.model.clone(), ck.params)?;
        t.adam = ck.adam;
        t.iteration = ck.iteration as usize;
        t.rng = ck.rng;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            config: self.config.clone(),
            iteration: self.iteration as u64,
            rng: self.rng.clone(),
            params: self.model.params.clone(),
            adam: self.adam.clone(),
        }
    }

    pub fn images(&self) -> &[(String, ImageRGB8)] {
        &self.images
    }

    pub fn learning_rate(&self) -> f64 {
        let c = &self.config;
        lr_multistep(self.iteration, c.lr0, &c.milestones(), c.lr_factor)
    }

    /// Sample a batch, take one Adam step, and return the loss before it.
    pub fn step(&mut self) -> Result<f64> {
        let c = &self.config;
        let (lr_in, hr) = sample_batch(&self.pairs, c.batch, c.patch, c.model.scale, c.augment, &mut self.rng)?;
        let mut g = Graph::new();
        let x = g.input(lr_in);
        let target = g.input(hr);
        let (y, b) = self.model.forward(&mut g, x, true)?;
        let loss = g.l1_loss(y, target)?;
        let value = g.value(loss).data()[0].as_f64();
        if !value.is_finite() {
            let at = g.first_non_finite().unwrap_or_else(|| "unknown node".into());
            return Err(Error::Numeric(format!(
                "non-finite loss at iteration {}; first non-finite value: {at}",
                self.iteration
            )));
        }
        g.backward(loss)?;
        let grads = b.grads(&g);
        drop(g);
        let lr = self.learning_rate();
        self.adam.step(&mut self.model.params, &grads, lr)?;
        self.iteration += 1;
        Ok(value)
    }

    pub fn evaluate(&self) -> EvalReport {
        let tlc = self.config.tlc.then_some(self.config.tlc_window);
        evaluate(&self.model, &self.images, tlc)
    }

    /// Train until `total_iters`, calling `progress` after every step with
    /// the iteration just completed and its loss.
    pub fn run(&mut self, mut progress: impl FnMut(usize, f64, Option<f64>)) -> Result<TrainLog> {
        let mut log = TrainLog::default();
        while self.iteration < self.config.total_iters {
            let loss = self.step()?;
            log.losses.push(loss);
            let it = self.iteration;
            let every = self.config.eval_interval;
            let psnr = (every > 0 && (it % every == 0 || it == self.config.total_iters)).then(|| {
                let p = self.evaluate().mean_psnr();
                log.evals.push((it, p));
                p
            });
            progress(it, loss, psnr);
        }
        Ok(log)
    }
}
