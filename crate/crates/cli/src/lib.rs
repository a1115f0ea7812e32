//! Run directories, manifests and stage orchestration for the `csm` tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod rundir;

pub use error::{CliError, Result};
