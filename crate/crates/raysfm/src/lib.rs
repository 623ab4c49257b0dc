//! Std companion of `raysfm-core`: dataset and checkpoint formats, PLY and
//! raymap export, a multi-threaded training driver, inference and
//! evaluation pipelines, and the `raysfm` command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod trainer;

pub use error::{Error, Result};
