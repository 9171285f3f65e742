//! File formats, dataset layout and subcommand implementations on top of
//! `asc-core`.

pub mod ckpt;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod rvol;
pub mod selftest;
pub mod tables;

pub use config::Config;
pub use error::{CliError, Result};
