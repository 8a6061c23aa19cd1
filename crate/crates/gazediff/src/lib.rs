//! File formats, configuration and pipeline stages around `gazediff-core`.

pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use gazediff_core as core;
