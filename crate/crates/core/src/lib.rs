// SPDX-License-Identifier: MIT OR Apache-2.0

//! Patch-based sLSTM quantile forecaster with contiguous patch masking,
//! training augmentations, synthetic data and evaluation tooling.

pub mod ablation;
pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod cpm;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod rng;
pub mod series;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use model::{forecast, ModelConfig, ModelParams, QuantileForecast};
pub use series::TimeSeries;
