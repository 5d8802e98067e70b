use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use motionseg::lidar_io::write_atomic;
use motionseg::pipeline::MosModel;
use motionseg::training::{train_stage1, train_stage2, LogRecord};
use motionseg::{Error, Result};

use crate::data::{self, create_dir, io_err, Frames};
use crate::DataArgs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "all")]
    pub stage: StageArg,
    /// Run directory for checkpoints, the log and the resolved configuration.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stage-1 checkpoint for stage 2; defaults to `<out>/stage1.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Skip stages whose checkpoint is already in the run directory and
    /// append to the existing log.
    #[arg(long)]
    pub resume: bool,
}

pub const LOG_FILE: &str = "train.jsonl";
pub const STAGE1_FILE: &str = "stage1.ckpt";
pub const STAGE2_FILE: &str = "stage2.ckpt";

pub fn run(args: &TrainArgs) -> Result<()> {
    let mut cfg = data::resolve(&args.data)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let stage1_path = args.out.join(STAGE1_FILE);
    let stage2_path = args.out.join(STAGE2_FILE);
    let want1 = args.stage != StageArg::Two;
    let want2 = args.stage != StageArg::One;
    let run1 = want1 && !(args.resume && stage1_path.exists());
    let run2 = want2 && !(args.resume && stage2_path.exists());
    if !run1 && !run2 {
        println!("nothing to do: requested stages are complete in {}", args.out.display());
        return Ok(());
    }

    let mut model = if run1 {
        MosModel::new(cfg.model.clone(), cfg.train.seed)?
    } else {
        let path = args.checkpoint.clone().unwrap_or_else(|| stage1_path.clone());
        if !path.exists() {
            return Err(Error::Config(format!(
                "stage 2 needs a stage-1 checkpoint; {} does not exist",
                path.display()
            )));
        }
        MosModel::load(&path)?
    };
    cfg.model = model.config.clone();

    create_dir(&args.out)?;
    let resolved = toml::to_string_pretty(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&args.out.join("config.toml"), resolved.as_bytes())?;
    let log_path = args.out.join(LOG_FILE);
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(args.resume)
        .truncate(!args.resume)
        .open(&log_path)
        .map_err(|e| io_err(&log_path, e))?;
    let mut sink = |r: &LogRecord| -> Result<()> {
        let line = serde_json::to_string(r).expect("log record serializes");
        writeln!(log, "{line}")
            .and_then(|_| log.flush())
            .map_err(|e| io_err(&log_path, e))?;
        eprintln!(
            "stage {} epoch {:>3}  loss {:.4}  val IoU {:.4}{}",
            r.stage,
            r.epoch,
            r.loss,
            r.val_iou,
            if r.best { "  *" } else { "" }
        );
        Ok(())
    };

    let frames = Frames::Training {
        ratio: cfg.data.static_ratio,
        seed: cfg.train.seed,
    };
    let cache = args.data.cache.as_deref();
    let train = data::samples(&cfg, &cfg.data.train, frames, cache)?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let val = data::samples(&cfg, &cfg.data.val, Frames::All, cache)?;
    eprintln!("{} training frames, {} validation frames", train.len(), val.len());

    if run1 {
        let report = train_stage1(&mut model, &train, &val, &cfg.train, &mut sink)?;
        model.save(&stage1_path)?;
        println!(
            "stage 1: best IoU {:.4} at epoch {} of {}, saved {}",
            report.best_iou,
            report.best_epoch,
            report.epochs_run,
            stage1_path.display()
        );
    }
    if run2 {
        let report = train_stage2(&mut model, &train, &val, &cfg.train, &mut sink)?;
        model.save(&stage2_path)?;
        println!(
            "stage 2: best IoU {:.4} at epoch {} of {}, saved {}",
            report.best_iou,
            report.best_epoch,
            report.epochs_run,
            stage2_path.display()
        );
    }
    Ok(())
}
