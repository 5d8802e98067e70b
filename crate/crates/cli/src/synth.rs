use std::path::{Path, PathBuf};

use clap::Args;
use motionseg::lidar_io::{generate_synthetic_sequence, sequence_dir, write_sequence, LabelRemap, SyntheticConfig};
use motionseg::{Error, Result};

use crate::data::StagedDir;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset root; the sequence goes to `<out>/sequences/<seq>/`.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene description (TOML); a street scene when absent.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value = "00")]
    pub seq: String,
    /// Frame count of the street scene.
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    /// Sensor rows of the street scene.
    #[arg(long, default_value_t = 64)]
    pub rows: usize,
    /// Sensor columns of the street scene.
    #[arg(long, default_value_t = 1024)]
    pub cols: usize,
    /// Replace an existing sequence.
    #[arg(long)]
    pub force: bool,
}

pub fn run(args: &SynthArgs) -> Result<()> {
    let mut scene = match &args.scene {
        Some(p) => SyntheticConfig::load(p)?,
        None => SyntheticConfig::street(args.frames, args.rows, args.cols),
    };
    scene.sequence_id = args.seq.clone();
    let seq = generate_synthetic_sequence(&scene)?;
    let target = sequence_dir(&args.out, &args.seq);
    if target.exists() && !args.force {
        return Err(Error::Config(format!(
            "{} exists; pass --force to replace it",
            target.display()
        )));
    }
    let stage = StagedDir::new(&target)?;
    write_sequence(stage.path(), &seq, &LabelRemap::default())?;
    stage.commit_from(&Path::new("sequences").join(&args.seq))?;
    let points: usize = seq.frames().iter().map(|f| f.cloud.len()).sum();
    println!("wrote {} frames ({} points) to {}", seq.len(), points, target.display());
    Ok(())
}
