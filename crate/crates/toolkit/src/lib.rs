//! File formats, configuration and pipeline stages of the `das` command line.
//!
//! The numerical work lives in [`das_core`]; this crate adds the binary
//! waterfall (`DASW`) and checkpoint (`HDLN`) formats, kernel, CSV and PGM
//! output, the scene/pipeline configuration language and the subcommands.

pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod io;
pub mod pipeline;

pub use error::{Result, ToolkitError};
