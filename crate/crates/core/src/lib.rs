//! Contextual auto-encoder correlation-filter tracking.

// NaN must fail validation, so guards are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod adapt;
pub mod autoencoder;
pub mod bench;
pub mod cf;
pub mod config;
pub mod context;
pub mod error;
pub mod features;
pub mod numerics;
pub mod synthetic;
pub mod tracker;

pub use config::PipelineConfig;
pub use error::{Error, Result};
