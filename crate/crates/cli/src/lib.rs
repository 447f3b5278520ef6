//! Experiment runner: trains runs into trace/model/manifest artifacts,
//! summarises them across splits, and runs the property suites.

pub mod cli;
pub mod error;
pub mod manifest;
pub mod run;
pub mod summary;
pub mod trace;

pub use cli::main_with_args;
pub use error::{CliError, ExitCode};
pub use manifest::RunManifest;
