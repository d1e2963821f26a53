//! Batch runner for ergolab experiments.

pub mod assemble;
pub mod config;
pub mod output;
pub mod run;

pub use run::{resolve_workers, run_config, run_path, run_text, validate_report, RunOptions, RunReport};
