//! Moving-class IoU and frame classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lidar_io::{MosLabel, MosLabels};

/// A frame is dynamic when it has more moving points than this.
pub const DYNAMIC_FRAME_THRESHOLD: usize = 100;

/// Moving-class confusion counts over labeled points.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    /// Counts over points whose truth is labeled.
    pub fn from_labels(pred: &[MosLabel], truth: &[MosLabel]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = Self::default();
        for (p, t) in pred.iter().zip(truth) {
            if *t == MosLabel::Unlabeled {
                continue;
            }
            match (p.is_moving(), t.is_moving()) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// True when neither truth nor prediction contains a moving point.
    pub fn no_movers(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    /// `TP / (TP + FP + FN)`, defined as 1 when the denominator is 0.
    pub fn iou(&self) -> f64 {
        let d = self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }
}

pub fn moving_iou(pred: &[MosLabel], truth: &[MosLabel]) -> Result<f64> {
    Ok(ConfusionCounts::from_labels(pred, truth)?.iou())
}

pub fn is_dynamic_frame(truth: &MosLabels) -> bool {
    truth.moving_count() > DYNAMIC_FRAME_THRESHOLD
}
