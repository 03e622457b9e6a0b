//! Experiment runner: reads a run configuration and executes the
//! collect, featurize, tune, train, evaluate and report stages with
//! on-disk caching.

pub mod config;
pub mod mock;
pub mod pipeline;

pub use config::{ConfigError, RunConfig};
pub use pipeline::{compact_caches, run, PipelineError, RunOptions, RunSummary, Stage};
