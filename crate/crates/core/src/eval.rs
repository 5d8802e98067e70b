//! Moving-IoU reports over labeled frames, per sequence and in aggregate.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lidar_io::MosLabel;
use crate::metrics::{ConfusionCounts, DYNAMIC_FRAME_THRESHOLD};
use crate::pipeline::{HeadMode, MosModel, PostMode};
use crate::postprocess::KnnConfig;
use crate::training::Sample;

pub const NO_MOVERS: &str = "no-movers";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalMode {
    pub head: HeadMode,
    pub post: PostMode,
}

impl EvalMode {
    pub const fn new(head: HeadMode, post: PostMode) -> Self {
        Self { head, post }
    }

    pub fn label(&self) -> &'static str {
        match (self.head, self.post) {
            (HeadMode::Image, PostMode::None) => "image",
            (HeadMode::Image, PostMode::Knn) => "image+knn",
            (HeadMode::Point, PostMode::None) => "point",
            (HeadMode::Point, PostMode::Knn) => "point+knn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub sequence_id: String,
    pub frame_id: usize,
    pub counts: ConfusionCounts,
    /// Truth holds more than the dynamic-frame threshold of moving points.
    pub dynamic: bool,
}

impl FrameScore {
    pub fn new(sequence_id: &str, frame_id: usize, pred: &[MosLabel], truth: &[MosLabel]) -> Result<Self> {
        Ok(Self {
            sequence_id: sequence_id.to_string(),
            frame_id,
            counts: ConfusionCounts::from_labels(pred, truth)?,
            dynamic: truth.iter().filter(|l| l.is_moving()).count() > DYNAMIC_FRAME_THRESHOLD,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeScores {
    pub mode: EvalMode,
    pub frames: Vec<FrameScore>,
}

impl ModeScores {
    /// Counts summed per sequence, in sequence-id order.
    pub fn sequences(&self) -> BTreeMap<String, ConfusionCounts> {
        let mut out: BTreeMap<String, ConfusionCounts> = BTreeMap::new();
        for f in &self.frames {
            out.entry(f.sequence_id.clone()).or_default().add(&f.counts);
        }
        out
    }

    pub fn total(&self) -> ConfusionCounts {
        let mut c = ConfusionCounts::default();
        self.frames.iter().for_each(|f| c.add(&f.counts));
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub modes: Vec<ModeScores>,
}

fn note(c: &ConfusionCounts) -> &'static str {
    if c.no_movers() {
        NO_MOVERS
    } else {
        ""
    }
}

fn csv_row(out: &mut String, mode: &str, seq: &str, frame: &str, c: &ConfusionCounts) {
    let _ = writeln!(
        out,
        "{mode},{seq},{frame},{},{},{},{},{:.6},{}",
        c.tp,
        c.fp,
        c.fn_,
        c.tn,
        c.iou(),
        note(c)
    );
}

impl EvalReport {
    pub fn sequence_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.modes.iter().flat_map(|m| m.sequences().into_keys()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Frame rows, then one row per sequence (`frame = all`), then the
    /// aggregate (`sequence = all`), for every mode.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,sequence,frame,tp,fp,fn,tn,iou,note\n");
        for m in &self.modes {
            let label = m.mode.label();
            for f in &m.frames {
                csv_row(&mut out, label, &f.sequence_id, &f.frame_id.to_string(), &f.counts);
            }
            for (seq, c) in m.sequences() {
                csv_row(&mut out, label, &seq, "all", &c);
            }
            csv_row(&mut out, label, "all", "all", &m.total());
        }
        out
    }

    /// Moving IoU in percent, one row per mode and one column per sequence
    /// plus the aggregate.
    pub fn to_text(&self) -> String {
        let ids = self.sequence_ids();
        let mut header = vec!["mode".to_string()];
        header.extend(ids.iter().cloned());
        header.push("all".into());
        let mut rows = vec![header];
        let mut annotate = false;
        for m in &self.modes {
            let seqs = m.sequences();
            let mut row = vec![m.mode.label().to_string()];
            let cells = ids.iter().map(|id| seqs.get(id).copied()).chain([Some(m.total())]);
            for c in cells {
                row.push(match c {
                    Some(c) if c.no_movers() => {
                        annotate = true;
                        format!("{:.1}*", 100.0 * c.iou())
                    }
                    Some(c) => format!("{:.1}", 100.0 * c.iou()),
                    None => "-".into(),
                });
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::from("moving IoU (%)\n");
        for (i, r) in rows.iter().enumerate() {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (cell, w))| {
                    if j == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        if annotate {
            out.push_str(&format!("* {NO_MOVERS}: no moving points in truth or prediction\n"));
        }
        out
    }
}

/// Scores every frame under each mode, running the 2D network once per frame.
pub fn evaluate(model: &MosModel, samples: &[Sample], modes: &[EvalMode], knn: &KnnConfig) -> Result<EvalReport> {
    let mut out: Vec<ModeScores> = modes
        .iter()
        .map(|&mode| ModeScores {
            mode,
            frames: Vec::with_capacity(samples.len()),
        })
        .collect();
    for chunk in samples.chunks(4) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let preds = model.predict_images(&refs)?;
        for (s, p) in chunk.iter().zip(&preds) {
            for m in out.iter_mut() {
                let labels = model.labels_from(s, p, m.mode.head, m.mode.post, knn)?;
                m.frames
                    .push(FrameScore::new(&s.sequence_id, s.frame_id, &labels, &s.labels)?);
            }
        }
    }
    Ok(EvalReport { modes: out })
}
