//! Moving-object segmentation for LiDAR scans: range-image projection,
//! residual images, a two-branch network trained with a small autodiff
//! engine, point-level refinement and evaluation.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod lidar_io;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod point_refine;
pub mod postprocess;
pub mod projection;
pub mod residual;
pub mod training;

pub use error::{Error, Result};
