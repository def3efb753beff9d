//! Stacked convolutional auto-encoders: partial forward passes, denoising
//! corruptions, the multi-stage reconstruction loss, its exact gradient, and
//! SGD training of base and expert models.

mod checkpoint;
mod conv;
mod denoise;
mod model;
mod train;

pub use checkpoint::{load_model, read_model, save_model, write_model, AEMD_MAGIC, AEMD_VERSION};
pub use conv::{Activation, ConvLayer, LayerGrad, KERNEL_SIDE};
pub use denoise::{corrupt_channels, count_from_fraction, exchange_count, exchange_vectors};
pub use model::{backward, multistage_loss, AutoEncoderModel, Gradients, INIT_STD};
pub use train::{pretrain_base, train_expert, TrainConfig, TrainOutcome, DEFAULT_BASE_LR};

pub(crate) use model::EncoderTrace;
