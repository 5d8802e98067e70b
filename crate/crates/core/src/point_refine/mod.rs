//! Point-level refinement of range-image predictions.

mod head;
mod sparse_conv;
mod voxel;

pub use head::{
    PointGeometry, PointHead, PointHeadConfig, PointOutput, SparseConvParams, VoxelAggregate, POINT_EXTRA_FEATURES,
    POINT_HEAD_PREFIX,
};
pub use sparse_conv::{kernel_offset, sparse_conv3d, Rulebook, SparseConvLayer, KERNEL_VOLUME};
pub use voxel::{devoxelize, voxel_coord, voxelize, SparseVoxelGrid, VoxelLayout};
