//! Fixed-point structural causal models: simulation, a causal-attention
//! transformer that learns them from data given a topological ordering,
//! amortized ordering inference, and evaluation metrics.

pub mod data;
pub mod error;
pub mod fip;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod scm;
pub mod synth;
pub mod to;

pub use data::{Dataset, GroundTruth, Matrix, Provenance, Standardization};
pub use error::{CoreError, Result};
