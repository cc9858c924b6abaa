//! Files, threads and the command line around [`evc_core`].

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod heatmap;
pub mod history;
pub mod imageio;
pub mod model_file;
pub mod pool;
pub mod results;

pub use error::{CliError, CliResult};
pub use evc_core;
