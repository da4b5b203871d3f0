//! Experiment harness for federated averaging HMC: TOML configs, the
//! experiment recipes behind the `fahmc` CLI, and their CSV outputs.

pub mod config;
pub mod error;
pub mod experiments;
pub mod io;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
