//! Command-line orchestration of the newcomer-engagement pipeline: a
//! TOML configuration, one subcommand per stage, flat-file artifacts and a
//! manifest tying every artifact to its inputs, config hash and seeds.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

pub use config::PipelineConfig;
pub use error::CliError;
pub use stages::{run, Stage};
