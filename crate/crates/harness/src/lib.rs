//! Experiment harness for `netfl`: TOML configs, seeded end-to-end runs and
//! CSV/JSON reports.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{load_config, parse_config, parse_config_with, ConfigError, ExperimentConfig};
pub use experiment::{run_experiment, train_val_report, ExperimentError, TrainVal};
pub use report::Report;
