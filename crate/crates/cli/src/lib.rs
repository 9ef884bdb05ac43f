//! Experiment runner for adaptive-gain consensus ADMM.
//!
//! Backs the `admm-sim` binary: JSON experiment configs, single runs with
//! trace output, fixed-versus-adaptive sweeps over network sizes, and
//! plot-ready residual series.

pub mod commands;
pub mod config;
mod error;
pub mod table;

pub use error::{CliError, Result};
