//! Dataset files, checkpoints, configuration, reports and experiment runs
//! on top of [`mdopt_core`].

pub use mdopt_core as core;

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod report;

pub use error::{Error, Result};
