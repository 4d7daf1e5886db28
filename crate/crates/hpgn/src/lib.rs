//! Enhancement of low-light images that have been through JPEG compression.
//!
//! The pipeline couples a compression prior (the quality factor and
//! quantization matrix of the JPEG round trip) with an illumination prior to
//! drive a small multi-scale CNN, trained end to end with a tape-based
//! autodiff engine that lives in this crate.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod enhancer;
pub mod error;
pub mod hif;
pub mod illumination;
pub mod img;
pub mod jpeg;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod selftest;
pub mod synth;
mod net;
pub mod tensor;
pub mod train;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};

// Training allocates multi-megabyte activation buffers on every tape op;
// glibc hands those straight to mmap, so each step pays page-fault costs.
// mimalloc keeps the buffers cached across steps.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;
