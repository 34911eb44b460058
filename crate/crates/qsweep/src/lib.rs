//! Quantization-aware ResNet experiments at desk scale: a scalable model
//! builder with per-layer precision assignment, closed-form compute and
//! memory cost models, Pareto tradeoff analysis, and a config-driven
//! training/sweep runner.

pub mod cli;
pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod model;
pub mod pareto;
pub mod results;
pub mod sweep;
pub mod train;

pub use error::{Error, Result};
