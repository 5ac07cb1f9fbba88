//! Training, evaluation and benchmark harness around the core model:
//! synthetic data, dataset and checkpoint files, and the `dfgcn` CLI.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod oracle;
pub mod synthetic;
pub mod train;

pub use error::{HarnessError, Result};
