//! Amortized topological-ordering inference: a dataset encoder that scores
//! leaves, the sequential d-TOE training loss, and leaf-peeling inference.

mod checkpoint;
mod dtoe;
mod encoder;
mod infer;
mod ops;
mod train;

pub use checkpoint::TO_MAGIC;
pub use dtoe::{d_toe, Constant, LeafModel, LeafScorer, OracleScorer};
pub use encoder::{normalize_input, CHANNELS, ToEncoderConfig, ToEncoderGraph, ToEncoderParams};
pub use infer::{infer_to, infer_to_voting, majority};
pub use ops::{argmax, bn_loss, bn_loss_value, leaves, pick_target, reduce_dataset, reduce_graph};
pub use train::{resume_to, train_to, ToLossPoint, ToTrainConfig, ToTrainState};
