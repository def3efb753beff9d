use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::FeatureMap;

use super::denoise::{corrupt_channels, exchange_vectors};
use super::model::{backward, AutoEncoderModel};

/// Base learning rate for built-in feature scale. Experts use ten times this.
pub const DEFAULT_BASE_LR: f64 = 3e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub corrupt_fraction: f64,
    pub exchange_fraction: f64,
    pub seed: u64,
    /// Number of encoder (and decoder) layers.
    pub depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_BASE_LR,
            epochs: 10,
            batch_size: 10,
            corrupt_fraction: 0.10,
            exchange_fraction: 0.10,
            seed: 0,
            depth: 2,
        }
    }
}

impl TrainConfig {
    /// Expert fine-tuning defaults: 30 epochs at ten times the base rate.
    pub fn expert(base: &TrainConfig) -> Self {
        Self { learning_rate: base.learning_rate * 10.0, epochs: 30, ..base.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be finite and nonnegative"));
        }
        for (name, f) in [("corrupt", self.corrupt_fraction), ("exchange", self.exchange_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::config(format!("{name} fraction {f} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A trained model and the mean batch loss of every epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AutoEncoderModel,
    pub epoch_losses: Vec<f64>,
}

fn check_samples(samples: &[FeatureMap]) -> Result<()> {
    let first = samples.first().ok_or_else(|| Error::config("no samples"))?;
    if samples.iter().any(|s| s.shape() != first.shape()) {
        return Err(Error::shape("training samples differ in shape"));
    }
    Ok(())
}

/// Trains the base auto-encoder from a seeded Gaussian initialization.
pub fn pretrain_base(samples: &[FeatureMap], cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_samples(samples)?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = AutoEncoderModel::new(samples[0].channels(), cfg.depth, &mut rng)?;
    sgd(model, samples, cfg, &mut rng)
}

/// Fine-tunes a copy of the base model on one contextual cluster.
pub fn train_expert(
    base: &AutoEncoderModel,
    cluster_samples: &[FeatureMap],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    check_samples(cluster_samples)?;
    cfg.validate()?;
    if cluster_samples[0].channels() != base.input_channels() {
        return Err(Error::shape("cluster samples do not match the base model"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sgd(base.clone(), cluster_samples, cfg, &mut rng)
}

fn sgd(
    mut model: AutoEncoderModel,
    samples: &[FeatureMap],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let clean: Vec<FeatureMap> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let noisy: Vec<FeatureMap> = clean
                .iter()
                .map(|x| {
                    let c = corrupt_channels(x, cfg.corrupt_fraction, rng);
                    exchange_vectors(&c, cfg.exchange_fraction, rng)
                })
                .collect();
            let (loss, grads) = backward(&model, &clean, &noisy)?;
            model.apply_gradients(&grads, cfg.learning_rate);
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(TrainOutcome { model, epoch_losses })
}
