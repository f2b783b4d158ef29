//! Dense f64 tensors, a reverse-mode tape, and the Adam optimizer.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use params::{Gradients, ModelParams, ParamId, INIT_RANGE};
pub use tape::{forward_backward, masked_softmax, NodeId, Tape, NORMALIZE_EPS};
pub use tensor::Tensor;

pub(crate) use tape::dot;
