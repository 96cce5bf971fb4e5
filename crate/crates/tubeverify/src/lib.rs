//! File formats, reports and the command-line driver for `tubeverify-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod output;
pub mod weights;

pub use error::CliError;
