//! Command-line front end for the fedinv simulator: TOML experiment files
//! with dotted overrides, bundled presets, sweeps, bound checks and exports.

pub mod check;
pub mod cli;
pub mod config;
pub mod error;
pub mod export;
pub mod presets;
pub mod run;

pub use cli::main_with;
pub use error::{CliError, CliResult, ExitCode};
