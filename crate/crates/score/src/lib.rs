//! Std companion of `pa-core`: feature containers on disk, TOML
//! configuration, a bank cache, parallel stage scheduling and the
//! `pa-score` command-line tool.

pub mod cache;
pub mod commands;
pub mod config;
pub mod container;
pub mod engine;
pub mod error;
pub mod output;

pub use config::PipelineConfig;
pub use container::{load_container, write_container};
pub use error::{Error, Result};
