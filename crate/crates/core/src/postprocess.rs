//! Range-image kNN label refinement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lidar_io::{MosLabel, PointCloud};
use crate::projection::{point_range, RangeImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
    /// Side of the square search window in pixels (odd).
    pub window: usize,
    pub sigma: f64,
    /// Neighbors whose range differs from the point by more than this
    /// (meters) are ignored.
    pub cutoff: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 5,
            window: 5,
            sigma: 1.0,
            cutoff: 1.0,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!("kNN window must be odd, got {}", self.window)));
        }
        if self.k == 0 || self.k > self.window * self.window {
            return Err(Error::Config(format!(
                "kNN k must lie in 1..={}, got {}",
                self.window * self.window,
                self.k
            )));
        }
        if !(self.sigma > 0.0) || !(self.cutoff >= 0.0) {
            return Err(Error::Config(
                "kNN sigma must be positive and cutoff non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Relabels every point by a Gaussian-weighted vote of the `k` pixels in
/// its window whose range is closest to the point's own range. Points with
/// no qualifying neighbor keep their pixel's label; points outside the
/// image are `Static`.
pub fn knn_refine(
    cloud: &PointCloud,
    pixel_labels: &[MosLabel],
    image: &RangeImage,
    config: &KnnConfig,
) -> Result<Vec<MosLabel>> {
    config.validate()?;
    let (h, w) = (image.height(), image.width());
    if pixel_labels.len() != h * w {
        return Err(Error::Shape(format!(
            "{} pixel labels for a {h}x{w} image",
            pixel_labels.len()
        )));
    }
    if image.num_points() != cloud.len() {
        return Err(Error::Shape(format!(
            "image indexes {} points, cloud has {}",
            image.num_points(),
            cloud.len()
        )));
    }
    let half = (config.window / 2) as isize;
    let range = image.range();
    let denom = 2.0 * config.sigma * config.sigma;
    let mut candidates: Vec<(f64, bool, usize)> = Vec::with_capacity(config.window * config.window);
    let mut out = Vec::with_capacity(cloud.len());
    for (i, pix) in image.point_pixels.iter().enumerate() {
        let Some(pix) = pix else {
            out.push(MosLabel::Static);
            continue;
        };
        let pix = *pix as usize;
        let own = pixel_labels[pix];
        let r = point_range(cloud.points[i]) as f64;
        let (row, col) = ((pix / w) as isize, (pix % w) as isize);
        candidates.clear();
        for dr in -half..=half {
            let rr = row + dr;
            if rr < 0 || rr >= h as isize {
                continue;
            }
            for dc in -half..=half {
                let cc = (col + dc).rem_euclid(w as isize);
                let q = rr as usize * w + cc as usize;
                if !image.is_valid(q) {
                    continue;
                }
                let d = (range[q] as f64 - r).abs();
                if d <= config.cutoff {
                    candidates.push((d, q != pix, q));
                }
            }
        }
        if candidates.is_empty() {
            out.push(own);
            continue;
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut votes = [0.0f64; 3];
        for (d, _, q) in candidates.iter().take(config.k) {
            votes[label_slot(pixel_labels[*q])] += (-d * d / denom).exp();
        }
        out.push(winner(&votes, own));
    }
    Ok(out)
}

fn label_slot(l: MosLabel) -> usize {
    match l {
        MosLabel::Unlabeled => 0,
        MosLabel::Static => 1,
        MosLabel::Moving => 2,
    }
}

fn winner(votes: &[f64; 3], own: MosLabel) -> MosLabel {
    let best = votes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if votes[label_slot(own)] == best {
        return own;
    }
    [MosLabel::Static, MosLabel::Moving, MosLabel::Unlabeled]
        .into_iter()
        .find(|l| votes[label_slot(*l)] == best)
        .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::{build_range_image, ProjectionConfig};

    /// Points on a 5×5 patch of pixels at equal range, one per pixel.
    fn patch(range: f32) -> (PointCloud, RangeImage, Vec<usize>) {
        let cfg = ProjectionConfig::with_size(16, 64);
        let mut pts = Vec::new();
        for r in 0..5 {
            for c in 0..5 {
                let el = (cfg.fov() * (1.0 - (r as f64 + 6.5) / 16.0) - cfg.fov_up()) as f32;
                let az = (std::f64::consts::PI * (1.0 - 2.0 * (c as f64 + 20.5) / 64.0)) as f32;
                pts.push([
                    range * el.cos() * az.cos(),
                    range * el.cos() * az.sin(),
                    range * el.sin(),
                ]);
            }
        }
        let n = pts.len();
        let cloud = PointCloud::new(pts, vec![0.5; n], 0).unwrap();
        let img = build_range_image(&cloud, &cfg);
        let pix = img.point_pixels.iter().map(|p| p.unwrap() as usize).collect();
        (cloud, img, pix)
    }

    #[test]
    fn isolated_wrong_pixel_flips_to_majority() {
        let (cloud, img, pix) = patch(10.0);
        let mut labels = vec![MosLabel::Static; img.config.pixels()];
        labels[pix[12]] = MosLabel::Moving;
        let out = knn_refine(&cloud, &labels, &img, &KnnConfig::default()).unwrap();
        assert!(out.iter().all(|l| *l == MosLabel::Static));
    }

    #[test]
    fn uniform_window_is_unchanged() {
        let (cloud, img, pix) = patch(10.0);
        let mut labels = vec![MosLabel::Static; img.config.pixels()];
        for p in &pix {
            labels[*p] = MosLabel::Moving;
        }
        let out = knn_refine(&cloud, &labels, &img, &KnnConfig::default()).unwrap();
        assert!(out.iter().all(|l| *l == MosLabel::Moving));
    }

    #[test]
    fn far_point_keeps_own_label() {
        let (mut cloud, _, _) = patch(10.0);
        cloud.points[12] = cloud.points[12].map(|v| v * 3.0);
        let img = build_range_image(&cloud, &ProjectionConfig::with_size(16, 64));
        let mut labels = vec![MosLabel::Static; img.config.pixels()];
        let own = img.point_pixels[12].unwrap() as usize;
        labels[own] = MosLabel::Moving;
        let out = knn_refine(&cloud, &labels, &img, &KnnConfig::default()).unwrap();
        assert_eq!(out[12], MosLabel::Moving);
    }

    #[test]
    fn invalid_parameters_rejected() {
        for cfg in [
            KnnConfig {
                window: 4,
                ..KnnConfig::default()
            },
            KnnConfig {
                k: 0,
                ..KnnConfig::default()
            },
            KnnConfig {
                k: 26,
                ..KnnConfig::default()
            },
            KnnConfig {
                sigma: 0.0,
                ..KnnConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
