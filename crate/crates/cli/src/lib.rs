//! Configuration, ensemble orchestration and persistence for the torus
//! matching experiments.

pub mod config;
pub mod pipeline;

pub use config::{validate_config, ConfigIssue, ExperimentConfig};
pub use pipeline::{run_pipeline, PipelineError, RunOutcome};
