//! File formats, experiment recipes and the `eerl` command line on top of
//! [`eerl_core`].

pub mod checks;
pub mod cli;
pub mod dataset;
mod error;
pub mod experiments;
pub mod manifest;
pub mod pattern;
pub mod tables;
pub mod text;
pub mod weights;

pub use eerl_core as core;
pub use error::{Error, Result};
