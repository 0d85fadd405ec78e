//! Benchmark harness for lightweight mammographic lesion segmentation.

pub mod cli;
pub mod dataset;
pub mod eval;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
