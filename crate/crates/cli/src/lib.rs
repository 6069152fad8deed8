//! Experiment driver for adaptive biasing potential runs: TOML configs,
//! CSV/JSON output and the acceptance suite.

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
