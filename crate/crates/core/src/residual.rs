//! Pose-compensated residual images between the current scan and its
//! predecessors.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::lidar_io::{PointCloud, Pose, ScanSequence};
use crate::projection::{build_range_image, project_point, ProjectionConfig, RangeImage};

pub const DEFAULT_N_RES: usize = 8;

/// `n_res` residual channels for one frame, channel `j` comparing against
/// frame `l - (j + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStack {
    pub height: usize,
    pub width: usize,
    /// Channel-major `[n_res][height][width]`.
    pub residuals: Vec<f32>,
    pub frame_id: usize,
    pub source_offsets: Vec<usize>,
}

impl ResidualStack {
    pub fn n_res(&self) -> usize {
        self.source_offsets.len()
    }

    pub fn channel(&self, j: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.residuals[j * n..(j + 1) * n]
    }

    pub fn zeros(n_res: usize, config: &ProjectionConfig, frame_id: usize) -> Self {
        Self {
            height: config.height,
            width: config.width,
            residuals: vec![0.0; n_res * config.pixels()],
            frame_id,
            source_offsets: (1..=n_res).collect(),
        }
    }

    pub fn roll_columns(&self, shift: usize) -> ResidualStack {
        let (h, w) = (self.height, self.width);
        let shift = shift % w;
        let mut out = self.clone();
        for j in 0..self.n_res() {
            for p in 0..h * w {
                let dst = (p / w) * w + (p % w + shift) % w;
                out.residuals[j * h * w + dst] = self.residuals[j * h * w + p];
            }
        }
        out
    }
}

/// Expresses `previous` in the coordinate frame of the current scan:
/// `p ↦ pose_cur⁻¹ · pose_prev · p`.
pub fn transform_scan(previous: &PointCloud, pose_prev: &Pose, pose_cur: &Pose) -> PointCloud {
    let rel = pose_cur.inverse().compose(pose_prev);
    let points = previous
        .points
        .iter()
        .map(|p| {
            let q = rel.transform_point(p.map(f64::from));
            q.map(|v| v as f32)
        })
        .collect();
    PointCloud {
        points,
        intensity: previous.intensity.clone(),
        frame_id: previous.frame_id,
    }
}

/// `|r − r'| / r` where both images have a point, 0 elsewhere.
pub fn compute_residual(current: &RangeImage, transformed_prev: &RangeImage) -> Vec<f32> {
    assert_eq!(current.config, transformed_prev.config, "images differ in geometry");
    let r_prev = transformed_prev.range();
    residual_against(current, |i| transformed_prev.is_valid(i).then(|| r_prev[i]))
}

fn residual_against(current: &RangeImage, prev: impl Fn(usize) -> Option<f32>) -> Vec<f32> {
    let r = current.range();
    (0..r.len())
        .map(|i| match prev(i) {
            Some(rp) if current.is_valid(i) => (r[i] - rp).abs() / r[i],
            _ => 0.0,
        })
        .collect()
}

/// Nearest range per pixel of `previous` after applying `rel`; infinite where
/// no point lands. Equals the range channel of the projected
/// [`transform_scan`] output without building the full image.
fn transformed_ranges(previous: &PointCloud, rel: &Pose, config: &ProjectionConfig) -> Vec<f32> {
    let mut best = vec![f32::INFINITY; config.pixels()];
    for p in &previous.points {
        let q = rel.transform_point(p.map(f64::from)).map(|v| v as f32);
        if let Some(h) = project_point(q, config) {
            let pix = h.v * config.width + h.u;
            if h.range < best[pix] {
                best[pix] = h.range;
            }
        }
    }
    best
}

/// Residuals of frame `l` against frames `l-1 .. l-n_res`. Offsets reaching
/// before the start of the sequence yield all-zero channels.
pub fn build_residual_stack(
    seq: &ScanSequence,
    l: usize,
    n_res: usize,
    config: &ProjectionConfig,
) -> Result<ResidualStack> {
    let current = build_range_image(&seq.frame(l).cloud, config);
    build_residual_stack_with(seq, l, n_res, config, &current)
}

/// As [`build_residual_stack`], reusing an already projected current frame.
pub fn build_residual_stack_with(
    seq: &ScanSequence,
    l: usize,
    n_res: usize,
    config: &ProjectionConfig,
    current: &RangeImage,
) -> Result<ResidualStack> {
    if n_res < 1 {
        return Err(Error::Config("n_res must be at least 1".into()));
    }
    if l >= seq.len() {
        return Err(Error::Config(format!("frame {l} outside sequence of {}", seq.len())));
    }
    if current.config != *config {
        return Err(Error::Shape(
            "current image was projected with a different geometry".into(),
        ));
    }
    let cur = seq.frame(l);
    let mut stack = ResidualStack::zeros(n_res, config, cur.cloud.frame_id);
    let n_pix = config.pixels();
    for j in 1..=n_res {
        if j > l {
            continue;
        }
        let prev = seq.frame(l - j);
        let rel = cur.pose.inverse().compose(&prev.pose);
        let ranges = transformed_ranges(&prev.cloud, &rel, config);
        let res = residual_against(current, |i| ranges[i].is_finite().then(|| ranges[i]));
        stack.residuals[(j - 1) * n_pix..j * n_pix].copy_from_slice(&res);
    }
    Ok(stack)
}

const CACHE_MAGIC: &[u8; 8] = b"MOSRES01";

/// On-disk residual cache. One file per `(sequence, frame)`:
///
/// ```text
/// magic   8 bytes  "MOSRES01"
/// n_res   u32 LE
/// height  u32 LE
/// width   u32 LE
/// frame   u64 LE
/// offsets n_res × u32 LE
/// data    n_res × height × width × f32 LE, channel-major
/// ```
#[derive(Debug, Clone)]
pub struct ResidualCache {
    root: PathBuf,
}

impl ResidualCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, sequence_id: &str, frame_id: usize) -> PathBuf {
        self.root.join(sequence_id).join(format!("{frame_id:06}.res"))
    }

    pub fn load(&self, sequence_id: &str, frame_id: usize) -> Result<Option<ResidualStack>> {
        let path = self.path(sequence_id, frame_id);
        if !path.exists() {
            return Ok(None);
        }
        let mut bytes = Vec::new();
        std::fs::File::open(&path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(&path, e))?;
        decode_stack(&bytes).map(Some).map_err(|m| Error::format(&path, m))
    }

    pub fn store(&self, sequence_id: &str, stack: &ResidualStack) -> Result<()> {
        let path = self.path(sequence_id, stack.frame_id);
        let dir = path.parent().unwrap();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bytes = encode_stack(stack);
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&path, e))
    }

    /// Returns the cached stack or computes and stores it.
    pub fn get_or_build(
        &self,
        seq: &ScanSequence,
        l: usize,
        n_res: usize,
        config: &ProjectionConfig,
    ) -> Result<ResidualStack> {
        let frame_id = seq.frame(l).cloud.frame_id;
        if let Some(s) = self.load(&seq.sequence_id, frame_id)? {
            if s.n_res() == n_res && s.height == config.height && s.width == config.width {
                return Ok(s);
            }
        }
        let s = build_residual_stack(seq, l, n_res, config)?;
        self.store(&seq.sequence_id, &s)?;
        Ok(s)
    }
}

pub fn encode_stack(stack: &ResidualStack) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + stack.residuals.len() * 4);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(stack.n_res() as u32).to_le_bytes());
    out.extend_from_slice(&(stack.height as u32).to_le_bytes());
    out.extend_from_slice(&(stack.width as u32).to_le_bytes());
    out.extend_from_slice(&(stack.frame_id as u64).to_le_bytes());
    for o in &stack.source_offsets {
        out.extend_from_slice(&(*o as u32).to_le_bytes());
    }
    for v in &stack.residuals {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_stack(bytes: &[u8]) -> std::result::Result<ResidualStack, String> {
    if bytes.len() < 28 || &bytes[..8] != CACHE_MAGIC {
        return Err("not a residual cache file".into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (n_res, height, width) = (u32_at(8), u32_at(12), u32_at(16));
    let frame_id = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let data_start = 28 + 4 * n_res;
    let expected = data_start + 4 * n_res * height * width;
    if bytes.len() != expected {
        return Err(format!("expected {expected} bytes, found {}", bytes.len()));
    }
    let source_offsets = (0..n_res).map(|j| u32_at(28 + 4 * j)).collect();
    let residuals = bytes[data_start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ResidualStack {
        height,
        width,
        residuals,
        frame_id,
        source_offsets,
    })
}

/// Convenience used by the preview writers: maps residuals to 8-bit grey.
pub fn render_residual_rgb(residual: &[f32], scale: f32) -> Vec<u8> {
    residual
        .iter()
        .flat_map(|d| {
            let g = (255.0 * (d / scale).clamp(0.0, 1.0)).round() as u8;
            [g, g, g]
        })
        .collect()
}

pub fn cache_dir_for(root: &Path) -> PathBuf {
    root.join("residual_cache")
}
