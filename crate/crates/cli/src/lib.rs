//! Experiment harness: configuration, dataset files, recipes, ablations and
//! sweep reports.

pub mod config;
pub mod data;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use pipeline::{ablate, run_recipe, Recipe, RunOutcome};
