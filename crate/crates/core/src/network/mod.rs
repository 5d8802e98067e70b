//! Two-branch range-image network.
//!
//! Shapes for the default configuration (64×256 input, base width 16,
//! motion width 8, depth 3), per sample:
//!
//! ```text
//! tensor               channels height  width
//! input.appearance            5     64    256
//! input.residuals             8     64    256
//! enc_a.context              16     64    256
//! enc_m.context               8     64    256
//! enc_a.stage1               32     64    256
//! enc_m.stage1               16     64    256
//! pool1                      32     32    128
//! enc_a.stage2               64     32    128
//! enc_m.stage2               32     32    128
//! pool2                      64     16     64
//! enc_a.stage3              128     16     64
//! enc_m.stage3               64     16     64
//! pool3                     128      8     32
//! bottleneck                128      8     32
//! dec3.shuffle               32     16     64
//! dec3.concat               160     16     64
//! dec3                       64     16     64
//! dec2.shuffle               16     32    128
//! dec2.concat                80     32    128
//! dec2                       32     32    128
//! dec1.shuffle                8     64    256
//! dec1.concat                40     64    256
//! dec1                       16     64    256
//! head                        2     64    256
//! ```

mod attention;
mod config;
mod layers;
mod meta_kernel;
mod model;

pub use attention::{AttentionOutput, MotionAttention};
pub use config::{BranchMode, NetworkConfig, PoolKind};
pub use layers::{BatchNorm, Builder, Conv, ConvUnit, Linear, MultiScaleBlock, ResContextBlock, UnitStyle};
pub use meta_kernel::{relative_coords, MetaKernel};
pub use model::{format_shape_table, shape_table, FeatureMaps, NetInput, NetOutput, RangeNet, ShapeRow, NET2D_PREFIX};
