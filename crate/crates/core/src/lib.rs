//! Clifford-M: a compact dual-resolution backbone built on a sparse rolling
//! geometric product, together with the data pipeline, training protocol,
//! metrics and profiling used to train and evaluate it on multi-label fundus
//! images.

pub mod backbone;
pub mod bench;
pub mod blocks;
pub mod data;
pub mod error;
pub mod gradcheck_suite;
pub mod kv;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
