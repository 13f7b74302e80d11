//! Command-line orchestration for the landmark recognition pipeline.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::CliError;
pub use pipeline::{run_pipeline, Recipe, RunSummary};
