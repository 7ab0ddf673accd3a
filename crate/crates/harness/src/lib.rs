//! Experiment harness for the bias-control pipeline: declarative configs,
//! versioned artifact formats, seeded multi-method runs, minority-fraction
//! ablation sweeps, and cross-seed report aggregation.

pub mod config;
pub mod error;
pub mod formats;
pub mod report;
pub mod runner;

pub use config::{ExperimentConfig, Method};
pub use error::{HarnessError, Result};
