//! Causal-attention transformer with an additive-noise head: training,
//! graph extraction, noise quantiles, generation and counterfactuals.

mod checkpoint;
mod config;
mod model;
mod params;
mod train;

pub use checkpoint::{TensorEntry, FIP_MAGIC};
pub(crate) use checkpoint::{split_tensors, tensor_entries};
pub use config::{FipConfig, FipTrainConfig};
pub use model::{FipAnm, FipMap, FipModel, Generated, GraphEstimate};
pub use params::{EmbedSide, FipGraph, FipParams};
pub use train::{anm_mse, from_ordered, split_rows, to_ordered, train_mse, DataSplit, FipTrainOutcome, LossPoint};
