//! Command implementations behind the `prrgnn` executable.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_cv, cmd_predict, cmd_prepare, cmd_train, predictions_csv, PredictSettings};
pub use config::{Overrides, RunConfig};
pub use error::CliError;
