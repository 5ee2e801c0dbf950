//! Experiment runner: configuration, the pretrain / continual / probe
//! pipeline, and run reports.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{ExperimentConfig, MethodChoice};
pub use pipeline::{build_domains, run, run_method, Domains, MethodName, MethodOutcome, RunError};
