//! Command-line front end: data ingestion, run configuration and the
//! fit/test/curve/simulation commands with CSV and JSON outputs.

pub mod commands;
pub mod config;
pub mod data;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}, row {row}: {message}")]
    Parse { path: String, row: usize, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Core(#[from] sdt_core::SdtError),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub use commands::{run, CommandOutput};
pub use config::{Command, Options, RunConfig};
