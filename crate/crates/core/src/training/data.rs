use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lidar_io::{MosLabel, PointCloud, ScanSequence};
use crate::metrics::is_dynamic_frame;
use crate::projection::{build_range_image, ProjectionConfig, RangeImage, CHANNEL_X, CHANNEL_Y, NUM_CHANNELS};
use crate::residual::{build_residual_stack_with, ResidualCache, ResidualStack};

/// One frame ready for the network: cloud, projection, residuals, labels.
#[derive(Debug, Clone)]
pub struct Sample {
    pub sequence_id: String,
    pub frame_id: usize,
    pub cloud: PointCloud,
    pub image: RangeImage,
    pub residuals: ResidualStack,
    pub labels: Vec<MosLabel>,
}

impl Sample {
    pub fn pixel_labels(&self) -> Vec<MosLabel> {
        self.image.pixel_labels(&self.labels)
    }

    /// Class indices of winning points per pixel; empty or unlabeled pixels
    /// are `None` (or class 0 with three head classes).
    pub fn pixel_truth(&self, head_classes: usize) -> Vec<Option<usize>> {
        self.image
            .index_map
            .iter()
            .map(|i| i.and_then(|i| self.labels[i as usize].class_index(head_classes)))
            .collect()
    }

    pub fn point_truth(&self, head_classes: usize) -> Vec<Option<usize>> {
        self.labels.iter().map(|l| l.class_index(head_classes)).collect()
    }

    /// Rotates the scene about z so the image moves `shift` columns right.
    pub fn rolled(&self, shift: usize) -> Sample {
        let w = self.image.width();
        let shift = shift % w;
        let angle = -2.0 * std::f64::consts::PI * shift as f64 / w as f64;
        let (s, c) = angle.sin_cos();
        let rot = |x: f32, y: f32| {
            (
                (c * x as f64 - s * y as f64) as f32,
                (s * x as f64 + c * y as f64) as f32,
            )
        };
        let mut image = self.image.roll_columns(shift);
        let n = image.config.pixels();
        for p in 0..n {
            if image.index_map[p].is_some() {
                let (x, y) = rot(image.channels[CHANNEL_X * n + p], image.channels[CHANNEL_Y * n + p]);
                image.channels[CHANNEL_X * n + p] = x;
                image.channels[CHANNEL_Y * n + p] = y;
            }
        }
        let mut cloud = self.cloud.clone();
        for p in cloud.points.iter_mut() {
            let (x, y) = rot(p[0], p[1]);
            p[0] = x;
            p[1] = y;
        }
        Sample {
            cloud,
            image,
            residuals: self.residuals.roll_columns(shift),
            ..self.clone()
        }
    }

    /// Mirrors the scene across the x-z plane (`y ↦ −y`, columns reversed).
    pub fn flipped(&self) -> Sample {
        let (h, w) = (self.image.height(), self.image.width());
        let mirror = |p: usize| (p / w) * w + (w - 1 - p % w);
        let mut image = self.image.clone();
        let n = h * w;
        for ch in 0..NUM_CHANNELS {
            for p in 0..n {
                let v = self.image.channels[ch * n + p];
                let valid = self.image.index_map[p].is_some();
                image.channels[ch * n + mirror(p)] = if ch == CHANNEL_Y && valid { -v } else { v };
            }
        }
        for p in 0..n {
            image.index_map[mirror(p)] = self.image.index_map[p];
        }
        for pp in image.point_pixels.iter_mut() {
            *pp = pp.map(|p| mirror(p as usize) as u32);
        }
        let mut residuals = self.residuals.clone();
        for j in 0..residuals.n_res() {
            for p in 0..n {
                residuals.residuals[j * n + mirror(p)] = self.residuals.residuals[j * n + p];
            }
        }
        let mut cloud = self.cloud.clone();
        for p in cloud.points.iter_mut() {
            p[1] = -p[1];
        }
        Sample {
            cloud,
            image,
            residuals,
            ..self.clone()
        }
    }

    /// Removes each point with probability `p` and re-projects. Residual
    /// pixels that become empty are zeroed.
    pub fn with_point_dropout(&self, p: f64, rng: &mut impl Rng) -> Sample {
        let keep: Vec<bool> = (0..self.cloud.len()).map(|_| rng.random::<f64>() >= p).collect();
        let (cloud, kept) = self.cloud.filter_indices(|i| keep[i]);
        let labels = kept.iter().map(|i| self.labels[*i]).collect();
        let image = build_range_image(&cloud, &self.image.config);
        let mut residuals = self.residuals.clone();
        let n = image.config.pixels();
        for j in 0..residuals.n_res() {
            for q in 0..n {
                if image.index_map[q].is_none() {
                    residuals.residuals[j * n + q] = 0.0;
                }
            }
        }
        Sample {
            cloud,
            image,
            residuals,
            labels,
            ..self.clone()
        }
    }
}

/// Random scene augmentations applied to training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub rotate: bool,
    pub flip: bool,
    pub point_dropout: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotate: true,
            flip: true,
            point_dropout: 0.0,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            rotate: false,
            flip: false,
            point_dropout: 0.0,
        }
    }

    pub fn apply(&self, sample: &Sample, rng: &mut impl Rng) -> Sample {
        let mut s = sample.clone();
        if self.rotate {
            let shift = rng.random_range(0..s.image.width());
            s = s.rolled(shift);
        }
        if self.flip && rng.random::<bool>() {
            s = s.flipped();
        }
        if self.point_dropout > 0.0 {
            s = s.with_point_dropout(self.point_dropout, rng);
        }
        s
    }
}

/// Projects the listed frames and builds their residual stacks, using the
/// cache when one is given. Frames without labels get `Unlabeled` points.
pub fn build_samples(
    seq: &ScanSequence,
    frames: &[usize],
    projection: &ProjectionConfig,
    n_res: usize,
    cache: Option<&ResidualCache>,
) -> Result<Vec<Sample>> {
    projection.validate()?;
    frames
        .iter()
        .map(|&l| {
            if l >= seq.len() {
                return Err(Error::Config(format!("frame {l} outside sequence of {}", seq.len())));
            }
            let frame = seq.frame(l);
            let image = build_range_image(&frame.cloud, projection);
            let residuals = match cache {
                Some(c) => c.get_or_build(seq, l, n_res, projection)?,
                None => build_residual_stack_with(seq, l, n_res, projection, &image)?,
            };
            let labels = match &frame.labels {
                Some(l) => l.labels.clone(),
                None => vec![MosLabel::Unlabeled; frame.cloud.len()],
            };
            Ok(Sample {
                sequence_id: seq.sequence_id.clone(),
                frame_id: frame.cloud.frame_id,
                cloud: frame.cloud.clone(),
                image,
                residuals,
                labels,
            })
        })
        .collect()
}

/// Keeps every dynamic frame and a seeded `ratio` share of static frames,
/// with at least one frame from each run of consecutive static frames.
/// Frames without labels count as static.
pub fn sample_training_frames(seq: &ScanSequence, ratio: f64, seed: u64) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("static ratio must lie in (0, 1], got {ratio}")));
    }
    let dynamic: Vec<bool> = seq
        .frames()
        .iter()
        .map(|f| f.labels.as_ref().is_some_and(is_dynamic_frame))
        .collect();
    if ratio >= 1.0 {
        return Ok((0..seq.len()).collect());
    }
    let mut runs: Vec<Vec<usize>> = Vec::new();
    for (i, d) in dynamic.iter().enumerate() {
        if *d {
            continue;
        }
        match runs.last_mut() {
            Some(run) if *run.last().unwrap() + 1 == i => run.push(i),
            _ => runs.push(vec![i]),
        }
    }
    let n_static: usize = runs.iter().map(Vec::len).sum();
    let target = ((n_static as f64 * ratio).round() as usize).max(runs.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = dynamic.clone();
    let mut rest = Vec::new();
    for run in &runs {
        let pick = run[rng.random_range(0..run.len())];
        keep[pick] = true;
        rest.extend(run.iter().copied().filter(|i| *i != pick));
    }
    rest.shuffle(&mut rng);
    for i in rest.into_iter().take(target - runs.len()) {
        keep[i] = true;
    }
    Ok((0..seq.len()).filter(|i| keep[*i]).collect())
}

/// Per-channel mean and standard deviation over valid pixels.
pub fn input_statistics(samples: &[Sample]) -> ([f64; NUM_CHANNELS], [f64; NUM_CHANNELS]) {
    let mut sum = [0.0f64; NUM_CHANNELS];
    let mut sq = [0.0f64; NUM_CHANNELS];
    let mut count = 0usize;
    for s in samples {
        let n = s.image.config.pixels();
        for p in 0..n {
            if s.image.index_map[p].is_none() {
                continue;
            }
            count += 1;
            for c in 0..NUM_CHANNELS {
                let v = s.image.channels[c * n + p] as f64;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
    }
    let mut mean = [0.0; NUM_CHANNELS];
    let mut std = [1.0; NUM_CHANNELS];
    if count > 0 {
        for c in 0..NUM_CHANNELS {
            mean[c] = sum[c] / count as f64;
            std[c] = (sq[c] / count as f64 - mean[c] * mean[c]).max(0.0).sqrt().max(1e-3);
        }
    }
    (mean, std)
}
