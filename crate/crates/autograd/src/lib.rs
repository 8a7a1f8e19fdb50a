//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Tape`] as they are evaluated. Calling
//! [`Tape::backward`] on a scalar result walks the tape in reverse and returns
//! the gradient of every node that depends on a trainable leaf.
//!
//! Broadcasting is limited to a leading batch: the right operand of a binary
//! op may have a shape equal to a suffix of the left operand's shape.

mod adam;
mod error;
mod gradcheck;
mod kernels;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{AutogradError, Result};
pub use gradcheck::{check_gradients, GradCheck, GradCheckReport};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
