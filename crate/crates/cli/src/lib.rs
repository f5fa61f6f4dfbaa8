//! Experiment harness: configuration, dataset/checkpoint I/O and the
//! `diffrx` command implementations.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plotdata;

pub use config::HarnessConfig;
pub use error::{HarnessError, Result};
