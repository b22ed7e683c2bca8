//! File formats, dataset directories, checkpoints and the `cadence-forge`
//! command-line tool built on `cadence-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod manifest;

pub use error::{ForgeError, Result};
