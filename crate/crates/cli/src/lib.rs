//! Library side of the `uqaudit` command-line tool: configuration, sampler
//! wiring, and the four subcommands.

pub mod commands;
pub mod config;

pub use commands::{audit, build_sampler, observation_model, protocol_check, resolve_dataset, sample, table, Overrides};
pub use config::{ConfigErrors, RunConfig, OUT_DIR_ENV};
