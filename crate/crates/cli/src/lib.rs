//! Configuration and batch commands behind the `ruinctl` binary.

pub mod config;
pub mod error;
pub mod run;

pub use config::{load_config, parse_config, RunConfig};
pub use error::{CliError, Result};

/// Environment variable capping the number of worker threads.
pub const WORKERS_ENV: &str = "RUIN_WORKERS";
