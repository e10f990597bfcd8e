//! Experiment driver for adversarially trained conditional normalizing
//! flows: configuration, ensemble files, checkpoints, reports and the
//! command-line interface. The numerics live in `advnf-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod data;
pub mod error;
pub mod pipeline;
pub mod reproduce;

pub use advnf_core as core;
pub use config::ExperimentConfig;
pub use error::{AppError, AppResult};
