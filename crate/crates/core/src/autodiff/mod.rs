//! Minimal tape-based reverse-mode automatic differentiation over dense
//! tensors.

pub mod checkpoint;
pub mod ops;
mod param;
mod real;
mod tape;
mod tensor;

pub use ops::{neighbor_map, BatchNormStats, Conv2dSpec};
pub use param::{ParamId, ParamKind, ParamStore, Parameter};
pub use real::{matmul, Real};
pub use tape::{Gradients, Grads, Mode, Tape, Var};
pub use tensor::Tensor;
