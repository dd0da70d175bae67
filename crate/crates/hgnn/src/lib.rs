//! File formats, the parallel batch executor and the command line for
//! [`hgnn_core`].

pub mod checkpoint;
pub mod cli;
mod error;
pub mod parallel;
pub mod records;
pub mod report;
pub mod settings;

pub use error::{Error, Result};
pub use parallel::RayonExecutor;
