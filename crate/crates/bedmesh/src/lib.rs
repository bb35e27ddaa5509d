//! File formats, settings, plots and the `bedmesh` command-line driver.

pub mod cli;
pub mod config;
pub mod container;
pub mod error;
pub mod io;
pub mod report;

pub use error::{CliError, Result};
