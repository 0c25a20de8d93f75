//! Experiment configuration, runners and report output.

pub mod bp;
pub mod config;
pub mod experiments;
pub mod field;
pub mod flops;
pub mod landscape;
pub mod report;

pub use config::ExperimentConfig;
pub use experiments::RunContext;
