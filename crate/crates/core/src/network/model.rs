use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamKind, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::projection::{RangeImage, CHANNEL_RANGE, NUM_CHANNELS};
use crate::residual::ResidualStack;

use super::attention::MotionAttention;
use super::config::{BranchMode, NetworkConfig, PoolKind};
use super::layers::{BatchNorm, Builder, Conv, MultiScaleBlock, ResContextBlock, UnitStyle};
use super::meta_kernel::MetaKernel;

/// Prefix of every parameter of the 2D network.
pub const NET2D_PREFIX: &str = "net2d.";

/// A batch of network inputs.
#[derive(Debug, Clone)]
pub struct NetInput<T> {
    /// Raw range-image channels `[N, 5, H, W]`, empty pixels at −1.
    pub range: Tensor<T>,
    /// `[N, n_res, H, W]`.
    pub residuals: Tensor<T>,
    /// Per-pixel validity, length `N·H·W`.
    pub valid: Vec<bool>,
}

impl<T: Real> NetInput<T> {
    pub fn from_frames(frames: &[(&RangeImage, &ResidualStack)]) -> Result<Self> {
        let Some((first, res0)) = frames.first() else {
            return Err(Error::Shape("empty batch".into()));
        };
        let (h, w) = (first.height(), first.width());
        let n_res = res0.n_res();
        let mut range = Vec::with_capacity(frames.len() * NUM_CHANNELS * h * w);
        let mut residuals = Vec::with_capacity(frames.len() * n_res * h * w);
        let mut valid = Vec::with_capacity(frames.len() * h * w);
        for (img, res) in frames {
            if (img.height(), img.width()) != (h, w) || (res.height, res.width) != (h, w) || res.n_res() != n_res {
                return Err(Error::Shape("batch frames disagree in size".into()));
            }
            range.extend(img.channels.iter().map(|v| T::lit(*v as f64)));
            residuals.extend(res.residuals.iter().map(|v| T::lit(*v as f64)));
            valid.extend(img.index_map.iter().map(Option::is_some));
        }
        let n = frames.len();
        Ok(Self {
            range: Tensor::new(vec![n, NUM_CHANNELS, h, w], range)?,
            residuals: Tensor::new(vec![n, n_res, h, w], residuals)?,
            valid,
        })
    }

    /// Builds an input from raw channel data, deriving validity from the
    /// range channel.
    pub fn from_tensors(range: Tensor<T>, residuals: Tensor<T>) -> Result<Self> {
        let (n, c, h, w) = range.dims4()?;
        let (rn, _, rh, rw) = residuals.dims4()?;
        if c != NUM_CHANNELS || (rn, rh, rw) != (n, h, w) {
            return Err(Error::Shape(format!(
                "range {:?} and residuals {:?} are inconsistent",
                range.shape(),
                residuals.shape()
            )));
        }
        let hw = h * w;
        let valid = (0..n * hw)
            .map(|i| range.data()[((i / hw) * c + CHANNEL_RANGE) * hw + i % hw] > T::zero())
            .collect();
        Ok(Self {
            range,
            residuals,
            valid,
        })
    }

    pub fn batch(&self) -> usize {
        self.range.shape()[0]
    }
}

/// Per-fusion-scale tensors: appearance features before fusion, motion
/// features, gated and fused outputs.
#[derive(Debug, Clone, Default)]
pub struct FeatureMaps {
    pub scales: Vec<usize>,
    pub appearance: Vec<Var>,
    pub motion: Vec<Var>,
    pub gated: Vec<Var>,
    pub fused: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct NetOutput {
    /// `[N, classes, H, W]` before the softmax.
    pub logits: Var,
    /// `[N, classes, H, W]`.
    pub probs: Var,
    /// Last decoder features `[N, base_channels, H, W]`.
    pub features: Var,
    pub maps: FeatureMaps,
    /// Encoder skip tensors, stage 1 first.
    pub skips: Vec<Var>,
    /// Decoder outputs, deepest first.
    pub decoded: Vec<Var>,
}

#[derive(Debug, Clone)]
struct MetaStage {
    kernel: MetaKernel,
    bn: BatchNorm,
}

/// The range-image network: appearance and motion encoders, attention
/// fusion, pixel-shuffle decoder and per-pixel classification head.
#[derive(Debug, Clone)]
pub struct RangeNet {
    pub config: NetworkConfig,
    input_mean: ParamId,
    input_std: ParamId,
    ctx_a1: ResContextBlock,
    meta: Option<MetaStage>,
    ctx_a2: ResContextBlock,
    stages_a: Vec<MultiScaleBlock>,
    ctx_m: Option<ResContextBlock>,
    stages_m: Vec<MultiScaleBlock>,
    attention: Vec<Option<MotionAttention>>,
    bottleneck: MultiScaleBlock,
    decoder: Vec<MultiScaleBlock>,
    head: Conv,
}

impl RangeNet {
    pub fn new<T: Real>(config: NetworkConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut root = Builder::new(store, &mut rng, "net2d");
        let style = UnitStyle {
            slope: config.leaky_slope,
            momentum: config.bn_momentum,
            circular: config.circular_width,
        };
        let c = config.base_channels;
        let dual = config.mode == BranchMode::Dual;
        let input_mean = root.constant("input.mean", &[NUM_CHANNELS], 0.0, ParamKind::Buffer);
        let input_std = root.constant("input.std", &[NUM_CHANNELS], 1.0, ParamKind::Buffer);
        let cin_a = if dual {
            NUM_CHANNELS
        } else {
            NUM_CHANNELS + config.n_res
        };

        let mut enc_a = root.sub("enc_a");
        let ctx_a1 = ResContextBlock::new(&mut enc_a.sub("ctx1"), cin_a, c, style);
        let meta = config.meta_kernel.then(|| MetaStage {
            kernel: MetaKernel::new(&mut enc_a.sub("meta"), c, c, config.meta_hidden, config.circular_width),
            bn: BatchNorm::new(&mut enc_a.sub("meta_bn"), c, config.bn_momentum),
        });
        let ctx_a2 = ResContextBlock::new(&mut enc_a.sub("ctx2"), c, c, style);
        let stages_a = (1..=config.depth)
            .map(|s| {
                let (ci, co) = (config.stage_channels(s - 1), config.stage_channels(s));
                MultiScaleBlock::new(&mut enc_a.sub(&format!("stage{s}")), ci, co, true, style)
            })
            .collect();
        drop(enc_a);

        let (ctx_m, stages_m, attention) = if dual {
            let mut enc_m = root.sub("enc_m");
            let ctx = ResContextBlock::new(&mut enc_m.sub("ctx"), config.n_res, config.motion_channels, style);
            let stages = (1..=config.depth)
                .map(|s| {
                    let (ci, co) = (config.motion_stage_channels(s - 1), config.motion_stage_channels(s));
                    MultiScaleBlock::new(&mut enc_m.sub(&format!("stage{s}")), ci, co, true, style)
                })
                .collect();
            drop(enc_m);
            let attention = (0..=config.depth)
                .map(|s| {
                    config.attention_scales.contains(&s).then(|| {
                        MotionAttention::new(
                            &mut root.sub(&format!("attention{s}")),
                            config.stage_channels(s),
                            config.motion_stage_channels(s),
                        )
                    })
                })
                .collect();
            (Some(ctx), stages, attention)
        } else {
            (None, Vec::new(), vec![None; config.depth + 1])
        };

        let cd = config.stage_channels(config.depth);
        let bottleneck = MultiScaleBlock::new(&mut root.sub("bottleneck"), cd, cd, true, style);
        let decoder = (1..=config.depth)
            .map(|s| {
                let d_s = config.stage_channels(s);
                let cin = d_s / 4 + config.stage_channels(s);
                MultiScaleBlock::new(
                    &mut root.sub(&format!("dec{s}")),
                    cin,
                    config.stage_channels(s - 1),
                    false,
                    style,
                )
            })
            .collect();
        let head = Conv::pointwise(&mut root.sub("head"), c, config.head_classes);
        Ok(Self {
            config,
            input_mean,
            input_std,
            ctx_a1,
            meta,
            ctx_a2,
            stages_a,
            ctx_m,
            stages_m,
            attention,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn attention(&self, scale: usize) -> Option<&MotionAttention> {
        self.attention.get(scale).and_then(Option::as_ref)
    }

    pub fn head(&self) -> &Conv {
        &self.head
    }

    /// Sets the per-channel normalization applied to valid input pixels.
    pub fn set_input_stats<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        mean: [f64; NUM_CHANNELS],
        std: [f64; NUM_CHANNELS],
    ) {
        let m = Tensor::from_fn(&[NUM_CHANNELS], |i| T::lit(mean[i]));
        let s = Tensor::from_fn(&[NUM_CHANNELS], |i| T::lit(std[i].max(1e-6)));
        store.get_mut(self.input_mean).value = m;
        store.get_mut(self.input_std).value = s;
    }

    fn normalized<T: Real>(&self, store: &ParamStore<T>, input: &NetInput<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = input.range.dims4()?;
        let hw = h * w;
        let mean = store.get(self.input_mean).value.data();
        let std = store.get(self.input_std).value.data();
        let d = input.range.data();
        Tensor::new(
            input.range.shape().to_vec(),
            (0..n * c * hw)
                .map(|i| {
                    let (b, ch, p) = (i / (c * hw), (i / hw) % c, i % hw);
                    if input.valid[b * hw + p] {
                        (d[i] - mean[ch]) / std[ch]
                    } else {
                        T::zero()
                    }
                })
                .collect(),
        )
    }

    fn coords<T: Real>(input: &NetInput<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = input.range.dims4()?;
        let hw = h * w;
        let d = input.range.data();
        let mut out = Vec::with_capacity(n * 3 * hw);
        for b in 0..n {
            out.extend_from_slice(&d[b * c * hw..(b * c + 3) * hw]);
        }
        Tensor::new(vec![n, 3, h, w], out)
    }

    fn pool<T: Real>(&self, tape: &Tape<T>, x: Var) -> Result<Var> {
        match self.config.pool {
            PoolKind::Soft => tape.softpool2d(x, (2, 2)),
            PoolKind::Average => tape.avg_pool2d(x, (2, 2)),
        }
    }

    pub fn forward<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, input: &NetInput<T>) -> Result<NetOutput> {
        let cfg = &self.config;
        let (_, c, h, w) = input.range.dims4()?;
        if c != NUM_CHANNELS || (h, w) != (cfg.height, cfg.width) {
            return Err(Error::Shape(format!(
                "network expects [N, 5, {}, {}], got {:?}",
                cfg.height,
                cfg.width,
                input.range.shape()
            )));
        }
        if input.residuals.shape()[1] != cfg.n_res {
            return Err(Error::Shape(format!(
                "network expects {} residual channels, got {}",
                cfg.n_res,
                input.residuals.shape()[1]
            )));
        }
        let slope = T::lit(cfg.leaky_slope);
        let norm = tape.constant(self.normalized(store, input)?);
        let res = tape.constant(input.residuals.clone());
        let dual = cfg.mode == BranchMode::Dual;
        let a_in = if dual { norm } else { tape.concat(&[norm, res], 1)? };

        let mut a = self.ctx_a1.forward(tape, store, a_in)?;
        if let Some(meta) = &self.meta {
            let coords = Self::coords(input)?;
            let y = meta.kernel.forward(tape, store, a, &coords, &input.valid)?;
            let y = tape.leaky_relu(y, slope);
            a = meta.bn.forward(tape, store, y)?;
        }
        a = self.ctx_a2.forward(tape, store, a)?;
        let mut m = match &self.ctx_m {
            Some(ctx) => Some(ctx.forward(tape, store, res)?),
            None => None,
        };

        let mut maps = FeatureMaps::default();
        let fuse = |scale: usize, a: Var, m: Option<Var>, maps: &mut FeatureMaps| -> Result<Var> {
            match (self.attention(scale), m) {
                (Some(att), Some(m)) => {
                    let out = att.forward(tape, store, a, m)?;
                    maps.scales.push(scale);
                    maps.appearance.push(a);
                    maps.motion.push(m);
                    maps.gated.push(out.gated);
                    maps.fused.push(out.fused);
                    Ok(out.fused)
                }
                _ => Ok(a),
            }
        };
        a = fuse(0, a, m, &mut maps)?;

        let enc_p = if cfg.encoder_dropout { cfg.dropout } else { 0.0 };
        let mut skips = Vec::with_capacity(cfg.depth);
        for s in 1..=cfg.depth {
            let mut pre_m = None;
            if let Some(mv) = m {
                let y = self.stages_m[s - 1].forward(tape, store, mv)?;
                pre_m = Some(y);
            }
            let pre_a = self.stages_a[s - 1].forward(tape, store, a)?;
            let pre_a = fuse(s, pre_a, pre_m, &mut maps)?;
            skips.push(pre_a);
            let d = tape.dropout(pre_a, enc_p);
            a = self.pool(tape, d)?;
            if let Some(pm) = pre_m {
                let d = tape.dropout(pm, enc_p);
                m = Some(self.pool(tape, d)?);
            }
        }

        let dec_p = if cfg.decoder_dropout { cfg.dropout } else { 0.0 };
        let mut x = self.bottleneck.forward(tape, store, a)?;
        let mut decoded = Vec::with_capacity(cfg.depth);
        for s in (1..=cfg.depth).rev() {
            let up = tape.pixel_shuffle(x, 2)?;
            let cat = tape.concat(&[up, skips[s - 1]], 1)?;
            let y = self.decoder[s - 1].forward(tape, store, cat)?;
            x = tape.dropout(y, dec_p);
            decoded.push(x);
        }
        let logits = self.head.forward(tape, store, x)?;
        let probs = tape.softmax(logits, 1)?;
        Ok(NetOutput {
            logits,
            probs,
            features: x,
            maps,
            skips,
            decoded,
        })
    }
}

/// One row of the documented tensor-shape table (per sample).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeRow {
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Tensor shapes produced by [`RangeNet::forward`] for one sample, derived
/// from the configuration alone.
pub fn shape_table(cfg: &NetworkConfig) -> Vec<ShapeRow> {
    let row = |name: String, channels: usize, level: usize| ShapeRow {
        name,
        channels,
        height: cfg.height >> level,
        width: cfg.width >> level,
    };
    let mut rows = Vec::new();
    let dual = cfg.mode == BranchMode::Dual;
    let cin = if dual { NUM_CHANNELS } else { NUM_CHANNELS + cfg.n_res };
    rows.push(row("input.appearance".into(), cin, 0));
    if dual {
        rows.push(row("input.residuals".into(), cfg.n_res, 0));
    }
    rows.push(row("enc_a.context".into(), cfg.base_channels, 0));
    if dual {
        rows.push(row("enc_m.context".into(), cfg.motion_channels, 0));
    }
    for s in 1..=cfg.depth {
        rows.push(row(format!("enc_a.stage{s}"), cfg.stage_channels(s), s - 1));
        if dual {
            rows.push(row(format!("enc_m.stage{s}"), cfg.motion_stage_channels(s), s - 1));
        }
        rows.push(row(format!("pool{s}"), cfg.stage_channels(s), s));
    }
    rows.push(row("bottleneck".into(), cfg.stage_channels(cfg.depth), cfg.depth));
    for s in (1..=cfg.depth).rev() {
        rows.push(row(format!("dec{s}.shuffle"), cfg.stage_channels(s) / 4, s - 1));
        rows.push(row(
            format!("dec{s}.concat"),
            cfg.stage_channels(s) / 4 + cfg.stage_channels(s),
            s - 1,
        ));
        rows.push(row(format!("dec{s}"), cfg.stage_channels(s - 1), s - 1));
    }
    rows.push(row("head".into(), cfg.head_classes, 0));
    rows
}

/// Renders [`shape_table`] as aligned text.
pub fn format_shape_table(cfg: &NetworkConfig) -> String {
    let mut s = format!("{:<20} {:>8} {:>6} {:>6}\n", "tensor", "channels", "height", "width");
    for r in shape_table(cfg) {
        s.push_str(&format!(
            "{:<20} {:>8} {:>6} {:>6}\n",
            r.name, r.channels, r.height, r.width
        ));
    }
    s
}
