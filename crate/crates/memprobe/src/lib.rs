//! File formats, reports and the command-line driver for `memprobe`.
//!
//! The numerical work lives in `memprobe-core`; this crate reads activation
//! dumps (`.memv`) and manifests, writes feature tables, statistical
//! reports and autoencoder model files, and wires everything into the
//! `memprobe` binary.

pub mod cli;
pub mod dump;
pub mod error;
pub mod manifest;
pub mod model_file;
pub mod provenance;
pub mod report;
pub mod table;

pub use error::{Error, Result};
