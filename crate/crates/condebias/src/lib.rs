//! File formats, experiment orchestration, reports and the command line for
//! conditional adversarial debiasing, on top of `condebias-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset_file;
pub mod error;
pub mod experiment;
pub mod report;
pub mod results;
pub mod theorem;

pub use error::{Error, Result};
