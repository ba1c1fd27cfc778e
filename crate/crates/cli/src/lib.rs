//! Library half of the `i3net` binary: run configuration and subcommands.

pub mod app;
pub mod commands;
pub mod runconfig;

pub use runconfig::{parse_config, parse_override, RunConfig};
