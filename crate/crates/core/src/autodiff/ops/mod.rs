//! Differentiable primitives, each recording its backward rule on the tape.

mod conv;
mod elementwise;
mod gather;
mod linear;
mod norm;
mod pool;
mod shape;

pub use conv::Conv2dSpec;
pub use norm::BatchNormStats;
pub use shape::neighbor_map;
