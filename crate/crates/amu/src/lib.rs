//! File formats, configuration, run manifests and the command-line
//! interface on top of `amu-core`.

pub mod amuf;
pub mod cli;
pub mod config;
pub mod error;
pub mod manifest;
pub mod records;

pub use error::{AmuError, Result};
