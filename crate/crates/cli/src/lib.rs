//! Experiment driver library behind the `fokcp` binary.

pub mod commands;
pub mod eval;
pub mod manifest;

pub use commands::{execute, Cli};
