//! File formats, experiment configuration and the command-line front end
//! for the importance-filtering simulator in `impfilter-core`.

pub mod commands;
pub mod config;
pub mod csv_data;
pub mod diagnose;
pub mod error;
pub mod experiment;
pub mod idx;
pub mod metrics;
pub mod report;

pub use error::{CliError, Result};
