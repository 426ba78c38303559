//! Command-line tools and the local decision service for AD-BOIN12 trials.

pub mod cli;
pub mod error;
pub mod report;
pub mod service;

pub use cli::{run, Cli};
pub use error::{CliError, Result};
