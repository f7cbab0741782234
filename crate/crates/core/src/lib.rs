//! Training and few-shot evaluation library for sub-cluster-aware encoders.
//!
//! Everything is deterministic given a seed: randomness flows from a single
//! [`rng::SeededRng`] through named substreams, numerics are `f64`, and all
//! heavy math lives in hand-written loops with analytic gradients that are
//! verified against finite differences in the test suite.

pub mod analysis;
pub mod cluster;
pub mod data;
pub mod error;
pub mod fewshot;
pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod memory;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Result, ScanError};
