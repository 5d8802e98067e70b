mod bench;
mod config;
mod data;
mod eval;
mod project;
mod synth;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use motionseg::pipeline::{HeadMode, PostMode};
use motionseg::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

/// Moving-object segmentation for LiDAR sequences in the KITTI layout.
#[derive(Debug, Parser)]
#[command(name = "motionseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a labeled sequence and write it in the KITTI layout.
    Synth(synth::SynthArgs),
    /// Write range images and index maps for every frame of a sequence.
    Project(project::ProjectArgs),
    /// Run the two training stages.
    Train(train::TrainArgs),
    /// Score a checkpoint on labeled sequences.
    Eval(eval::EvalArgs),
    /// Time projection, residuals and the forward passes.
    Bench(bench::BenchArgs),
}

/// Options shared by the commands that read a dataset.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root holding `sequences/<id>/`; overrides the configuration.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Residual cache directory.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    Image,
    Point,
}

impl From<HeadArg> for HeadMode {
    fn from(h: HeadArg) -> Self {
        match h {
            HeadArg::Image => HeadMode::Image,
            HeadArg::Point => HeadMode::Point,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PostArg {
    None,
    Knn,
}

impl From<PostArg> for PostMode {
    fn from(p: PostArg) -> Self {
        match p {
            PostArg::None => PostMode::None,
            PostArg::Knn => PostMode::Knn,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Format { .. } | Error::Parse { .. } | Error::Checkpoint(_) => EXIT_IO,
        Error::Shape(_) | Error::Numeric(_) | Error::DegenerateScene(_) => EXIT_NUMERIC,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth::run(&a),
        Command::Project(a) => project::run(&a),
        Command::Train(a) => train::run(&a),
        Command::Eval(a) => eval::run(&a),
        Command::Bench(a) => bench::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
