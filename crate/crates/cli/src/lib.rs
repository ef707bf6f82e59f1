//! Experiment drivers behind the `fsmle` binary.

pub mod app;
pub mod commands;
pub mod config;
pub mod output;

pub use app::{run_cli, ExitCode};
