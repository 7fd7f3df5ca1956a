//! File formats, dataset handling, the training loop and the command line
//! around [`cotmisr_core`].

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod png;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
