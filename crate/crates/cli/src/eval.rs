use std::path::PathBuf;

use clap::Args;
use motionseg::eval::{evaluate, EvalMode};
use motionseg::lidar_io::write_atomic;
use motionseg::pipeline::{HeadMode, MosModel, PostMode};
use motionseg::projection::{render_range_rgb, write_png_rgb};
use motionseg::{Error, Result};

use crate::data::{self, create_dir, Frames};
use crate::{DataArgs, HeadArg, PostArg};

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sequences to score; the configured test split, else the validation split.
    #[arg(long, value_delimiter = ',')]
    pub seq: Vec<String>,
    /// Heads to score; repeat or comma-separate for a side-by-side report.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "image")]
    pub head: Vec<HeadArg>,
    /// Post-processing applied to the image head.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "none")]
    pub post: Vec<PostArg>,
    /// Per-frame, per-sequence and aggregate counts as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// The text table, also printed to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory for predicted-label overlays, one PNG per frame and mode.
    #[arg(long)]
    pub preview: Option<PathBuf>,
}

/// The requested head × post combinations. kNN refines image labels only,
/// so point+knn is dropped from a product and rejected when asked for alone.
pub fn modes(heads: &[HeadArg], posts: &[PostArg]) -> Result<Vec<EvalMode>> {
    let mut out = Vec::new();
    for &h in heads {
        for &p in posts {
            let m = EvalMode::new(h.into(), p.into());
            if (m.head, m.post) == (HeadMode::Point, PostMode::Knn) || out.contains(&m) {
                continue;
            }
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::Config(
            "kNN post-processing applies to the image head only".into(),
        ));
    }
    Ok(out)
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let mut cfg = data::resolve(&args.data)?;
    let modes = modes(&args.head, &args.post)?;
    let model = MosModel::load(&args.checkpoint)?;
    if modes.iter().any(|m| m.head == HeadMode::Point) && model.stage < 2 {
        eprintln!("warning: the point head of this checkpoint has not been trained");
    }
    cfg.model = model.config.clone();
    let ids = if !args.seq.is_empty() {
        args.seq.clone()
    } else if !cfg.data.test.is_empty() {
        cfg.data.test.clone()
    } else {
        cfg.data.val.clone()
    };
    if ids.is_empty() {
        return Err(Error::Config(
            "no sequences to evaluate; pass --seq or set data.test".into(),
        ));
    }
    let samples = data::samples(&cfg, &ids, Frames::All, args.data.cache.as_deref())?;
    let report = evaluate(&model, &samples, &modes, &cfg.knn)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = &args.report {
        write_atomic(p, text.as_bytes())?;
    }
    if let Some(p) = &args.csv {
        write_atomic(p, report.to_csv().as_bytes())?;
    }
    if let Some(dir) = &args.preview {
        for m in &modes {
            let d = dir.join(m.label());
            create_dir(&d)?;
            for s in &samples {
                let labels = model.predict(s, m.head, m.post, &cfg.knn)?;
                let rgb = render_range_rgb(&s.image, Some(&s.image.pixel_labels(&labels)));
                let name = format!("{}_{:06}.png", s.sequence_id, s.frame_id);
                write_png_rgb(d.join(name), s.image.width(), s.image.height(), &rgb)?;
            }
        }
    }
    Ok(())
}
