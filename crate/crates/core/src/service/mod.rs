//! Configuration, command-line entry points and the HTTP generation API.

pub mod cli;
pub mod config;
pub mod http;

pub use cli::{run, run_from_args, Cli, EXIT_FAILURE, EXIT_OK, EXIT_REFUSED, EXIT_USAGE};
pub use config::{AppConfig, GuardThresholds, ServerConfig};
pub use http::{router, AppState, GenerateResponse};
