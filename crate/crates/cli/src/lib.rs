//! Command-line front end for outlying-sequence detection.
//!
//! Every subcommand reads a layered TOML configuration (see [`config`]),
//! validates it completely before doing any work, and writes JSON or CSV.
//! Invalid input exits with status 2 and a single `error: <field>: <reason>`
//! line; runtime failures exit with status 1.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use app::{main_with, Cli};
pub use error::{CliError, CliResult};
