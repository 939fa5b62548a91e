//! Experiment orchestration for the `esdfm` binary: configuration, the
//! pre-train / stream pipeline and the report-writing subcommands.

pub mod commands;
pub mod config;
pub mod pipeline;

pub use commands::{cmd_gen_data, cmd_pretrain, cmd_robustness, cmd_run, cmd_sweep_elapsed};
pub use config::ExperimentConfig;
