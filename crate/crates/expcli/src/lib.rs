//! Configuration-driven experiment runner: flat key=value configs, one
//! JSON record per observation appended to disk, deterministic under any
//! worker count, plus lossless raster rendering and report tables.

pub mod config;
pub mod records;
pub mod render;
pub mod report;
pub mod runner;

pub use config::{Config, ConfigError};
pub use records::ResultRecord;
