//! Dataset readers, file formats, the trainer and the command-line
//! frontend for the `readkit-core` reading comprehension toolkit.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod files;
pub mod instances;
pub mod pipeline;
pub mod prefetch;
pub mod squad;
pub mod trainer;

pub use error::{Error, Result};
pub use readkit_core;
