//! Reverse-mode automatic differentiation over dense f64 tensors.

mod tape;
mod tensor;

pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
