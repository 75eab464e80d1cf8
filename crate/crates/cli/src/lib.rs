//! Command-line driver for the curation pipeline: config loading, the run
//! manifest, individual stages and multi-stage recipes.

pub mod config;
pub mod error;
pub mod manifest;
pub mod recipes;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
pub use stages::{Phase, Pipeline, Stage, StageSummary};
