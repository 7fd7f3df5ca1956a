//! Numerical core of the CoT-MISR multi-image super-resolution network.
//!
//! Everything in this crate is pure computation over in-memory buffers and
//! builds without `std` (only `alloc` is required):
//!
//! - [`tensor`] / [`autodiff`]: a dense tensor and a tape-based reverse-mode
//!   differentiator with the operator set the network needs.
//! - [`model`]: configuration, parameter layout and the forward pass
//!   (median reference, shallow encoder, LRCA and T-Block units, pixel-shuffle
//!   reconstruction).
//! - [`metrics`]: clearance-masked cPSNR / cSSIM with bias correction and
//!   registration-shift search, plus the bicubic baseline.
//! - [`scene`]: frame stacks, clearance preprocessing, frame padding and the
//!   train/validation split.
//! - [`train`]: loss, Adam with two parameter groups, and a single training step.
//!
//! File formats, dataset IO and the command line live in the `cotmisr` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod autodiff;
pub mod error;
pub mod image;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod scene;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
