//! Every pipeline hyperparameter in one flat, TOML-serializable record.
//!
//! Randomness is driven by the single `seed`; the per-stage configs handed
//! out by the accessors derive their seeds from it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::AdaptationConfig;
use crate::autoencoder::{TrainConfig, DEFAULT_BASE_LR};
use crate::context::{SelectorConfig, DEFAULT_INIT_TRIALS, SELECTOR_HIDDEN};
use crate::error::{Error, Result};
use crate::features::BuiltinFeatureConfig;
use crate::tracker::{TrackerConfig, SCALE_STEP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,

    /// Number of experts `N_e`.
    pub n_experts: usize,
    pub init_trials: usize,

    /// Auto-encoder depth `N_l`.
    pub layers: usize,
    /// Auto-encoder mini-batch size `m`.
    pub batch_size: usize,
    pub corrupt_fraction: f64,
    pub exchange_fraction: f64,
    pub base_lr: f64,
    pub base_epochs: usize,
    /// Expert learning rate as a multiple of `base_lr`.
    pub expert_lr_ratio: f64,
    pub expert_epochs: usize,

    pub selector_hidden: usize,
    /// Selector mini-batch size `m'`.
    pub selector_batch_size: usize,
    pub selector_lr: f64,
    pub selector_epochs: usize,

    pub lambda_theta: f64,
    pub adapt_lr: f64,
    pub adapt_epochs: usize,
    /// Kept channels `N_c`.
    pub n_keep: usize,
    /// Correlation-filter regularizer.
    pub cf_lambda: f64,

    pub sigma_g: f64,
    pub gamma: f64,
    pub lambda_s: f64,
    pub lambda_re: f64,
    pub n_re: usize,
    pub scale_step: f64,
    pub roi_factor: f64,
    pub scale_search: bool,
    pub occlusion_handling: bool,
    pub update_during_occlusion: bool,

    pub features: FeatureSettings,
}

/// Built-in extractor geometry. The seed comes from the pipeline seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSettings {
    pub input_size: usize,
    pub cell_size: usize,
    pub channels: usize,
    pub intensity_gain: f64,
    pub texture_gain: f64,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        let b = BuiltinFeatureConfig::default();
        Self {
            input_size: b.input_size,
            cell_size: b.cell_size,
            channels: b.channels,
            intensity_gain: b.intensity_gain,
            texture_gain: b.texture_gain,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let sel = SelectorConfig::default();
        let adapt = AdaptationConfig::default();
        let trk = TrackerConfig::default();
        Self {
            seed: 0,
            n_experts: 10,
            init_trials: DEFAULT_INIT_TRIALS,
            layers: 2,
            batch_size: train.batch_size,
            corrupt_fraction: train.corrupt_fraction,
            exchange_fraction: train.exchange_fraction,
            base_lr: DEFAULT_BASE_LR,
            base_epochs: train.epochs,
            expert_lr_ratio: 2.0,
            expert_epochs: 30,
            selector_hidden: SELECTOR_HIDDEN,
            selector_batch_size: sel.batch_size,
            selector_lr: sel.learning_rate,
            selector_epochs: sel.epochs,
            lambda_theta: adapt.lambda_theta,
            adapt_lr: adapt.adapt_lr,
            adapt_epochs: adapt.adapt_epochs,
            n_keep: adapt.n_keep,
            cf_lambda: adapt.cf_lambda,
            sigma_g: trk.sigma_g,
            gamma: trk.gamma,
            lambda_s: trk.lambda_s,
            lambda_re: trk.lambda_re,
            n_re: trk.n_re,
            scale_step: SCALE_STEP,
            roi_factor: trk.roi_factor,
            scale_search: trk.scale_search,
            occlusion_handling: trk.occlusion_handling,
            update_during_occlusion: trk.update_during_occlusion,
            features: FeatureSettings::default(),
        }
    }
}

// Stage offsets mixed into the master seed.
const PRETRAIN_STREAM: u64 = 1;
const EXPERT_STREAM: u64 = 2;
const CLUSTER_STREAM: u64 = 3;
const SELECTOR_STREAM: u64 = 4;
const FEATURE_STREAM: u64 = 5;

fn stream(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k)
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::config("seed must fit in a signed 64-bit integer"));
        }
        let positive = [
            ("n_experts", self.n_experts),
            ("init_trials", self.init_trials),
            ("layers", self.layers),
            ("batch_size", self.batch_size),
            ("selector_hidden", self.selector_hidden),
            ("selector_batch_size", self.selector_batch_size),
            ("n_keep", self.n_keep),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        for (name, v) in
            [("base_lr", self.base_lr), ("expert_lr_ratio", self.expert_lr_ratio), ("selector_lr", self.selector_lr)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and nonnegative")));
            }
        }
        let compressed = self.features.channels >> self.layers;
        if self.n_keep > compressed {
            return Err(Error::config(format!("n_keep {} exceeds the {compressed} compressed channels", self.n_keep)));
        }
        self.base_train().validate()?;
        self.tracker().validate()?;
        self.tracker().adaptation.validate()?;
        BuiltinFeatureConfig::feature_size(&self.builtin_features())?;
        Ok(())
    }

    pub fn base_train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.base_lr,
            epochs: self.base_epochs,
            batch_size: self.batch_size,
            corrupt_fraction: self.corrupt_fraction,
            exchange_fraction: self.exchange_fraction,
            seed: stream(self.seed, PRETRAIN_STREAM),
            depth: self.layers,
        }
    }

    pub fn expert_train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.base_lr * self.expert_lr_ratio,
            epochs: self.expert_epochs,
            seed: stream(self.seed, EXPERT_STREAM),
            ..self.base_train()
        }
    }

    pub fn cluster_seed(&self) -> u64 {
        stream(self.seed, CLUSTER_STREAM)
    }

    pub fn selector(&self) -> SelectorConfig {
        SelectorConfig {
            hidden: self.selector_hidden,
            batch_size: self.selector_batch_size,
            learning_rate: self.selector_lr,
            epochs: self.selector_epochs,
            seed: stream(self.seed, SELECTOR_STREAM),
        }
    }

    pub fn adaptation(&self) -> AdaptationConfig {
        AdaptationConfig {
            lambda_theta: self.lambda_theta,
            adapt_lr: self.adapt_lr,
            adapt_epochs: self.adapt_epochs,
            n_keep: self.n_keep,
            cf_lambda: self.cf_lambda,
        }
    }

    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            roi_factor: self.roi_factor,
            sigma_g: self.sigma_g,
            gamma: self.gamma,
            lambda_s: self.lambda_s,
            lambda_re: self.lambda_re,
            n_re: self.n_re,
            scale_step: self.scale_step,
            scale_search: self.scale_search,
            occlusion_handling: self.occlusion_handling,
            update_during_occlusion: self.update_during_occlusion,
            adaptation: self.adaptation(),
        }
    }

    pub fn builtin_features(&self) -> BuiltinFeatureConfig {
        let f = &self.features;
        BuiltinFeatureConfig {
            input_size: f.input_size,
            cell_size: f.cell_size,
            channels: f.channels,
            seed: stream(self.seed, FEATURE_STREAM),
            intensity_gain: f.intensity_gain,
            texture_gain: f.texture_gain,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}
