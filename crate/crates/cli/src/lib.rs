//! Batch pipeline for wind-power ramp classification: `prepare` builds labeled
//! datasets, `train` fits one boosted model per horizon, `evaluate` compares it
//! against persistence and majority-class baselines and `predict` scores new
//! windows.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{GridChoice, Overrides, PipelineConfig, Threshold};
pub use error::{CliError, Result};
