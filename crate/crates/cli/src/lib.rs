//! Experiment driver: configuration, denoising runs, comparison reports,
//! LP export of single patches, and oracle checks.

pub mod commands;
pub mod config;
pub mod dictionary_io;
pub mod report;
pub mod run;

pub use config::{ConfigError, ExperimentConfig, LambdaPolicy, Method};
pub use report::{compare_report, format_table, parse_table, Comparison, Reconstruction, ReportError, ResultRow};
pub use run::{run_denoise, RunError, RunSummary};
