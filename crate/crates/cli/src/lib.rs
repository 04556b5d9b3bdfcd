//! Command-line driver: configuration, sample execution and the
//! subcommand bodies behind the `sgen` binary.

pub mod commands;
pub mod config;
pub mod runner;
