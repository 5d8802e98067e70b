use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamKind, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::lidar_io::PointCloud;
use crate::network::{Builder, Linear};
use crate::projection::{point_range, RangeImage, CHANNEL_RANGE, NUM_CHANNELS};

use super::sparse_conv::{Rulebook, KERNEL_VOLUME};
use super::voxel::VoxelLayout;

/// Prefix of every point-head parameter.
pub const POINT_HEAD_PREFIX: &str = "point_head.";

/// Per-point input columns added to the back-projected image features:
/// own `(x, y, z, r, e)`, the pixel's five channels, and the range gap
/// between the point and its pixel.
pub const POINT_EXTRA_FEATURES: usize = 2 * NUM_CHANNELS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoxelAggregate {
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointHeadConfig {
    pub voxel_size: f64,
    pub hidden: usize,
    pub sparse_layers: usize,
    pub mlp_layers: usize,
    pub aggregate: VoxelAggregate,
}

impl Default for PointHeadConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.25,
            hidden: 32,
            sparse_layers: 2,
            mlp_layers: 2,
            aggregate: VoxelAggregate::Mean,
        }
    }
}

impl PointHeadConfig {
    /// One sparse convolution and one point layer.
    pub fn lite() -> Self {
        Self {
            sparse_layers: 1,
            mlp_layers: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0) {
            return Err(Error::Config(format!(
                "voxel_size must be positive, got {}",
                self.voxel_size
            )));
        }
        if self.hidden == 0 || self.mlp_layers == 0 {
            return Err(Error::Config(
                "point head needs hidden width and at least one point layer".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SparseConvParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct PointOutput {
    /// `[P, classes]`.
    pub logits: Var,
    pub probs: Var,
}

/// Refines per-point scores from back-projected image features with a
/// point-wise MLP branch and a sparse voxel branch.
#[derive(Debug, Clone)]
pub struct PointHead {
    pub config: PointHeadConfig,
    pub feature_channels: usize,
    pub classes: usize,
    input_mean: ParamId,
    input_std: ParamId,
    point_mlp: Vec<Linear>,
    voxel_convs: Vec<SparseConvParams>,
    fuse: Linear,
}

/// Geometry of one frame prepared for the point head.
#[derive(Debug, Clone)]
pub struct PointGeometry {
    pub layout: VoxelLayout,
    pub rules: Rc<Rulebook>,
    pub point_to_voxel: Rc<Vec<u32>>,
}

impl PointGeometry {
    pub fn new(cloud: &PointCloud, voxel_size: f64) -> Result<Self> {
        let layout = VoxelLayout::new(&cloud.points, voxel_size)?;
        let rules = Rc::new(Rulebook::from_layout(&layout));
        let point_to_voxel = Rc::new(layout.point_to_voxel.clone());
        Ok(Self {
            layout,
            rules,
            point_to_voxel,
        })
    }
}

impl PointHead {
    pub fn new<T: Real>(
        config: PointHeadConfig,
        feature_channels: usize,
        classes: usize,
        store: &mut ParamStore<T>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(store, &mut rng, "point_head");
        let input_mean = b.constant("input.mean", &[NUM_CHANNELS], 0.0, ParamKind::Buffer);
        let input_std = b.constant("input.std", &[NUM_CHANNELS], 1.0, ParamKind::Buffer);
        let cin = feature_channels + POINT_EXTRA_FEATURES;
        let h = config.hidden;
        let point_mlp = (0..config.mlp_layers)
            .map(|l| Linear::new(&mut b.sub(&format!("point{l}")), if l == 0 { cin } else { h }, h))
            .collect();
        let voxel_convs = (0..config.sparse_layers)
            .map(|l| {
                let ci = if l == 0 { cin } else { h };
                let mut s = b.sub(&format!("voxel{l}"));
                SparseConvParams {
                    weight: s.uniform("w", &[KERNEL_VOLUME, ci, h], KERNEL_VOLUME * ci, ParamKind::Weight),
                    bias: s.uniform("b", &[h], KERNEL_VOLUME * ci, ParamKind::Bias),
                }
            })
            .collect();
        let voxel_width = if config.sparse_layers == 0 { cin } else { h };
        let fuse = Linear::new(&mut b.sub("fuse"), h + voxel_width, classes);
        Ok(Self {
            config,
            feature_channels,
            classes,
            input_mean,
            input_std,
            point_mlp,
            voxel_convs,
            fuse,
        })
    }

    pub fn voxel_convs(&self) -> &[SparseConvParams] {
        &self.voxel_convs
    }

    pub fn fuse_layer(&self) -> &Linear {
        &self.fuse
    }

    pub fn set_input_stats<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        mean: [f64; NUM_CHANNELS],
        std: [f64; NUM_CHANNELS],
    ) {
        store.get_mut(self.input_mean).value = Tensor::from_fn(&[NUM_CHANNELS], |i| T::lit(mean[i]));
        store.get_mut(self.input_std).value = Tensor::from_fn(&[NUM_CHANNELS], |i| T::lit(std[i].max(1e-6)));
    }

    /// Hand-crafted per-point columns, `[P, POINT_EXTRA_FEATURES]`.
    pub fn extra_features<T: Real>(
        &self,
        store: &ParamStore<T>,
        cloud: &PointCloud,
        image: &RangeImage,
    ) -> Result<Tensor<T>> {
        if image.num_points() != cloud.len() {
            return Err(Error::Shape(format!(
                "image indexes {} points, cloud has {}",
                image.num_points(),
                cloud.len()
            )));
        }
        let mean = store.get(self.input_mean).value.data();
        let std = store.get(self.input_std).value.data();
        let norm = |c: usize, v: f32| (T::lit(v as f64) - mean[c]) / std[c];
        let n_pix = image.config.pixels();
        let mut out = Vec::with_capacity(cloud.len() * POINT_EXTRA_FEATURES);
        for i in 0..cloud.len() {
            let p = cloud.points[i];
            let r = point_range(p);
            let own = [p[0], p[1], p[2], r, cloud.intensity[i]];
            out.extend(own.iter().enumerate().map(|(c, v)| norm(c, *v)));
            match image.point_pixels[i] {
                Some(pix) if image.is_valid(pix as usize) => {
                    let pix = pix as usize;
                    for c in 0..NUM_CHANNELS {
                        out.push(norm(c, image.channels[c * n_pix + pix]));
                    }
                    out.push(T::lit((r - image.channels[CHANNEL_RANGE * n_pix + pix]) as f64));
                }
                _ => out.extend(std::iter::repeat_n(T::zero(), NUM_CHANNELS + 1)),
            }
        }
        Tensor::new(vec![cloud.len(), POINT_EXTRA_FEATURES], out)
    }

    /// Scores for the points of one frame. `pixel_rows` holds image features
    /// as `[N·H·W, C]`; the frame's pixels start at row `pixel_offset`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Real>(
        &self,
        tape: &Tape<T>,
        store: &ParamStore<T>,
        pixel_rows: Var,
        pixel_offset: usize,
        cloud: &PointCloud,
        image: &RangeImage,
        geometry: &PointGeometry,
    ) -> Result<PointOutput> {
        let (_, c) = tape.value(pixel_rows).dims2()?;
        if c != self.feature_channels {
            return Err(Error::Shape(format!(
                "point head expects {} feature channels, got {c}",
                self.feature_channels
            )));
        }
        if geometry.point_to_voxel.len() != cloud.len() {
            return Err(Error::Shape("voxel layout does not match the cloud".into()));
        }
        let index: Vec<Option<u32>> = image
            .point_pixels
            .iter()
            .map(|p| p.map(|p| (p as usize + pixel_offset) as u32))
            .collect();
        let gathered = tape.gather_rows(pixel_rows, Rc::new(index))?;
        let extras = tape.constant(self.extra_features(store, cloud, image)?);
        let x0 = tape.concat(&[gathered, extras], 1)?;

        let mut h = x0;
        for layer in &self.point_mlp {
            let y = layer.forward(tape, store, h)?;
            h = tape.relu(y);
        }

        let n_vox = geometry.layout.len();
        let mut v = match self.config.aggregate {
            VoxelAggregate::Mean => tape.segment_mean(x0, geometry.point_to_voxel.clone(), n_vox)?,
            VoxelAggregate::Max => tape.segment_max(x0, geometry.point_to_voxel.clone(), n_vox)?,
        };
        for conv in &self.voxel_convs {
            let w = tape.param(store, conv.weight);
            let b = tape.param(store, conv.bias);
            let y = tape.sparse_conv3d(v, w, Some(b), geometry.rules.clone())?;
            v = tape.relu(y);
        }
        let back = Rc::new(geometry.point_to_voxel.iter().map(|i| Some(*i)).collect::<Vec<_>>());
        let per_point = tape.gather_rows(v, back)?;

        let fused = tape.concat(&[h, per_point], 1)?;
        let logits = self.fuse.forward(tape, store, fused)?;
        let probs = tape.softmax(logits, 1)?;
        Ok(PointOutput { logits, probs })
    }
}
