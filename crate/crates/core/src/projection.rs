//! Spherical projection of point clouds into multi-channel range images.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lidar_io::{MosLabel, PointCloud};

/// Channel order of [`RangeImage::channels`].
pub const CHANNEL_X: usize = 0;
pub const CHANNEL_Y: usize = 1;
pub const CHANNEL_Z: usize = 2;
pub const CHANNEL_RANGE: usize = 3;
pub const CHANNEL_INTENSITY: usize = 4;
pub const NUM_CHANNELS: usize = 5;

/// Value stored in every channel of an empty pixel.
pub const EMPTY_FILL: f32 = -1.0;

/// Image geometry. Field-of-view angles are given in degrees, `fov_down_deg`
/// negative below the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    pub width: usize,
    pub height: usize,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            width: 2048,
            height: 64,
            fov_up_deg: 3.0,
            fov_down_deg: -25.0,
        }
    }
}

impl ProjectionConfig {
    /// The reduced image used for CPU-scale experiments.
    pub fn desk() -> Self {
        Self {
            width: 256,
            ..Self::default()
        }
    }

    pub fn with_size(height: usize, width: usize) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }

    pub fn fov_up(&self) -> f64 {
        self.fov_up_deg.to_radians()
    }

    /// Total vertical field of view `f_up + |f_down|` in radians.
    pub fn fov(&self) -> f64 {
        self.fov_up() + self.fov_down_deg.abs().to_radians()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!(
                "range image must be at least 1x1, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.fov() > 0.0) {
            return Err(Error::Config("vertical field of view must be positive".into()));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Range of a point as stored in the range channel.
#[inline]
pub fn point_range(p: [f32; 3]) -> f32 {
    let [x, y, z] = p.map(f64::from);
    (x * x + y * y + z * z).sqrt() as f32
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHit {
    /// Column.
    pub u: usize,
    /// Row.
    pub v: usize,
    pub range: f32,
}

/// Maps a point to its pixel, or `None` when it has zero range or falls
/// outside the vertical field of view. Columns wrap around the azimuth.
pub fn project_point(p: [f32; 3], config: &ProjectionConfig) -> Option<PixelHit> {
    let [x, y, z] = p.map(f64::from);
    let r = (x * x + y * y + z * z).sqrt();
    if !(r > 0.0) {
        return None;
    }
    let w = config.width as f64;
    let h = config.height as f64;
    let u = 0.5 * (1.0 - y.atan2(x) / std::f64::consts::PI) * w;
    let v = (1.0 - ((z / r).asin() + config.fov_up()) / config.fov()) * h;
    if !(v >= 0.0 && v < h) {
        return None;
    }
    // Both are non-negative here, so truncation is floor. atan2 ∈ [−π, π]
    // puts u in [0, w]; only u = w wraps.
    let (u, v) = (u as usize, v as usize);
    let u = if u >= config.width { u - config.width } else { u };
    Some(PixelHit { u, v, range: r as f32 })
}

/// Five-channel `(x, y, z, r, e)` image plus the bookkeeping needed to go
/// back to points.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub config: ProjectionConfig,
    /// Channel-major `[5][height][width]`.
    pub channels: Vec<f32>,
    /// Winning point per pixel.
    pub index_map: Vec<Option<u32>>,
    /// Pixel of every source point, including points that lost a collision.
    pub point_pixels: Vec<Option<u32>>,
}

impl RangeImage {
    pub fn height(&self) -> usize {
        self.config.height
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn num_points(&self) -> usize {
        self.point_pixels.len()
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.config.pixels();
        &self.channels[c * n..(c + 1) * n]
    }

    pub fn range(&self) -> &[f32] {
        self.channel(CHANNEL_RANGE)
    }

    #[inline]
    pub fn is_valid(&self, pixel: usize) -> bool {
        self.index_map[pixel].is_some()
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.index_map.iter().map(Option::is_some).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.index_map.iter().filter(|i| i.is_some()).count()
    }

    /// Per-pixel labels taken from the winning point; empty pixels are
    /// `Unlabeled`.
    pub fn pixel_labels(&self, point_labels: &[MosLabel]) -> Vec<MosLabel> {
        self.index_map
            .iter()
            .map(|i| i.map_or(MosLabel::Unlabeled, |i| point_labels[i as usize]))
            .collect()
    }

    /// Rolls the image `shift` columns to the right, wrapping around.
    /// Equivalent to rotating the cloud about z by `-shift` pixel pitches.
    pub fn roll_columns(&self, shift: usize) -> RangeImage {
        let (h, w) = (self.height(), self.width());
        let shift = shift % w;
        let remap = |p: usize| (p / w) * w + (p % w + shift) % w;
        let mut out = self.clone();
        for c in 0..NUM_CHANNELS {
            for p in 0..h * w {
                out.channels[c * h * w + remap(p)] = self.channels[c * h * w + p];
            }
        }
        for p in 0..h * w {
            out.index_map[remap(p)] = self.index_map[p];
        }
        for pp in out.point_pixels.iter_mut() {
            *pp = pp.map(|p| remap(p as usize) as u32);
        }
        out
    }
}

/// Projects every point; when several points share a pixel the nearer one
/// wins, ties going to the lower point index.
pub fn build_range_image(cloud: &PointCloud, config: &ProjectionConfig) -> RangeImage {
    let n_pix = config.pixels();
    let mut index_map: Vec<Option<u32>> = vec![None; n_pix];
    let mut best_range = vec![f32::INFINITY; n_pix];
    let mut point_pixels = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points.iter().enumerate() {
        let hit = project_point(*p, config);
        point_pixels.push(hit.map(|h| (h.v * config.width + h.u) as u32));
        if let Some(h) = hit {
            let pix = h.v * config.width + h.u;
            // Points are visited in index order, so strict `<` keeps the
            // lower index on ties.
            if h.range < best_range[pix] {
                best_range[pix] = h.range;
                index_map[pix] = Some(i as u32);
            }
        }
    }
    let mut channels = vec![EMPTY_FILL; NUM_CHANNELS * n_pix];
    for (pix, idx) in index_map.iter().enumerate() {
        if let Some(i) = idx {
            let i = *i as usize;
            let p = cloud.points[i];
            channels[CHANNEL_X * n_pix + pix] = p[0];
            channels[CHANNEL_Y * n_pix + pix] = p[1];
            channels[CHANNEL_Z * n_pix + pix] = p[2];
            channels[CHANNEL_RANGE * n_pix + pix] = best_range[pix];
            channels[CHANNEL_INTENSITY * n_pix + pix] = cloud.intensity[i];
        }
    }
    RangeImage {
        config: *config,
        channels,
        index_map,
        point_pixels,
    }
}

/// Gathers per-point rows from a channel-major `C × h × w` feature image.
/// Each point takes its pixel's features (also when it lost the pixel to a
/// nearer point); points outside the image get zeros.
pub fn back_project(features: &[f32], channels: usize, image: &RangeImage) -> Vec<f32> {
    let n_pix = image.config.pixels();
    assert_eq!(features.len(), channels * n_pix, "feature image size mismatch");
    let mut out = vec![0.0; image.num_points() * channels];
    for (row, pix) in out.chunks_exact_mut(channels.max(1)).zip(&image.point_pixels) {
        if let Some(pix) = pix {
            let pix = *pix as usize;
            assert!(pix < n_pix, "pixel index out of bounds");
            for (c, o) in row.iter_mut().enumerate() {
                *o = features[c * n_pix + pix];
            }
        }
    }
    out
}

/// Back-projects a per-pixel label image to points. Points outside the image
/// become `Static`.
pub fn back_project_labels(pixel_labels: &[MosLabel], image: &RangeImage) -> Vec<MosLabel> {
    image
        .point_pixels
        .iter()
        .map(|p| p.map_or(MosLabel::Static, |p| pixel_labels[p as usize]))
        .collect()
}

/// Colors used for label overlays in previews.
fn label_color(label: MosLabel) -> Option<[u8; 3]> {
    match label {
        MosLabel::Moving => Some([230, 40, 40]),
        _ => None,
    }
}

/// Renders the range channel as 8-bit grey (near = bright, empty = black),
/// with moving pixels tinted red when labels are supplied. Returns RGB bytes.
pub fn render_range_rgb(image: &RangeImage, labels: Option<&[MosLabel]>) -> Vec<u8> {
    let range = image.range();
    let max = range.iter().copied().filter(|r| *r > 0.0).fold(0.0f32, f32::max);
    let mut rgb = Vec::with_capacity(range.len() * 3);
    for (pix, r) in range.iter().enumerate() {
        let grey = if image.is_valid(pix) && max > 0.0 {
            (255.0 * (1.0 - 0.85 * r / max)).round() as u8
        } else {
            0
        };
        let color = labels
            .and_then(|l| label_color(l[pix]))
            .map(|c| c.map(|v| ((v as u16 + grey as u16) / 2) as u8));
        rgb.extend_from_slice(&color.unwrap_or([grey; 3]));
    }
    rgb
}

pub fn write_png_rgb(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .write_image_data(rgb)
        .map_err(|e| Error::format(path, e.to_string()))
}
