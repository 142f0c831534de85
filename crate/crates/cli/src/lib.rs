//! Command-line driver for `mrpd-core`: run configuration, the FLD array
//! format, previews, manifests and the five subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fld;
pub mod formats;
pub mod manifest;
pub mod pgm;

pub use config::{Config, Overrides};
pub use error::CliError;
pub use fld::{FldArray, Payload};
pub use manifest::RunManifest;
