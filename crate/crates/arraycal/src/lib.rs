pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod montecarlo;
pub mod report;

pub use arraycal_core;
pub use error::{Error, Result};
