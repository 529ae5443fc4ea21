//! Experiment runner and file formats around the `fedsim-core`
//! simulation kernels: manifest ingestion/export, the line-oriented
//! configuration format, CSV result emission, and the sweep
//! orchestrator behind the `fedsim` binary.

pub mod cli;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;
pub mod runner;

pub use error::{AppError, Result};
