//! Numerical core of `memprobe`.
//!
//! Everything here is pure computation over in-memory buffers: the four
//! families of model-internal features computed from vision-transformer
//! layer outputs, the rank-correlation / regression battery used to relate
//! them to human memorability scores, and a small sparse autoencoder whose
//! per-image reconstruction loss acts as a memorability proxy.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the dataset
//! manifest and the command-line driver live in the `memprobe` crate.
#![no_std]

extern crate alloc;

pub mod error;
pub mod features;
pub mod linalg;
pub mod sae;
pub mod stats;

pub use error::{Error, Result};
pub use features::{Column, Feature, FeatureTable, TensorKind, TensorSource};
pub use linalg::Matrix;
pub use stats::{CorrelationResult, GlmFit, GlmTerm};
