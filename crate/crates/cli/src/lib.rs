//! Experiment driver for the `uot` scaling solvers: JSON configurations,
//! CSV and PPM exchange, and the color-transfer pipeline.

pub mod color;
pub mod colortransfer;
pub mod config;
pub mod error;
pub mod experiment;
pub mod histogram;
pub mod ppm;
pub mod table;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use experiment::run_experiment;
