use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use motionseg::lidar_io::{write_atomic, Frame, PointCloud, Pose, ScanSequence};
use motionseg::pipeline::{HeadMode, ModelConfig, MosModel, PostMode};
use motionseg::point_refine::PointHeadConfig;
use motionseg::postprocess::KnnConfig;
use motionseg::projection::{build_range_image, ProjectionConfig};
use motionseg::residual::build_residual_stack_with;
use motionseg::training::Sample;
use motionseg::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Model to time; a freshly initialized one from the configuration when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Points per synthetic frame.
    #[arg(long, default_value_t = 122_000)]
    pub points: usize,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image height for a fresh model.
    #[arg(long)]
    pub height: Option<usize>,
    /// Image width for a fresh model.
    #[arg(long)]
    pub width: Option<usize>,
    /// Writes the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Random returns spread over the vertical field of view at 2-60 m.
pub fn random_cloud(n: usize, proj: &ProjectionConfig, frame_id: usize, rng: &mut impl Rng) -> PointCloud {
    let (down, up) = (proj.fov_down_deg.to_radians(), proj.fov_up_deg.to_radians());
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for _ in 0..n {
        let yaw = rng.random_range(-PI..PI);
        let pitch = rng.random_range(down..up);
        let r = rng.random_range(2.0..60.0);
        points.push([
            (r * pitch.cos() * yaw.cos()) as f32,
            (r * pitch.cos() * yaw.sin()) as f32,
            (r * pitch.sin()) as f32,
        ]);
        intensity.push(rng.random::<f32>());
    }
    PointCloud {
        points,
        intensity,
        frame_id,
    }
}

struct Timing {
    name: &'static str,
    ms: Vec<f64>,
}

impl Timing {
    fn mean(&self) -> f64 {
        self.ms.iter().sum::<f64>() / self.ms.len() as f64
    }

    fn min(&self) -> f64 {
        self.ms.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn max(&self) -> f64 {
        self.ms.iter().copied().fold(0.0, f64::max)
    }
}

fn time<T>(name: &'static str, warmup: usize, iters: usize, mut f: impl FnMut() -> Result<T>) -> Result<Timing> {
    for _ in 0..warmup {
        f()?;
    }
    let mut ms = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        std::hint::black_box(f()?);
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(Timing { name, ms })
}

fn models(args: &BenchArgs) -> Result<(MosModel, MosModel)> {
    let model = match &args.checkpoint {
        Some(p) => {
            if args.height.is_some() || args.width.is_some() {
                return Err(Error::Config("--height/--width apply to a fresh model only".into()));
            }
            MosModel::load(p)?
        }
        None => {
            let mut cfg: ModelConfig = RunConfig::load_or_default(args.config.as_deref())?.model;
            if let Some(h) = args.height {
                cfg.projection.height = h;
                cfg.network.height = h;
            }
            if let Some(w) = args.width {
                cfg.projection.width = w;
                cfg.network.width = w;
            }
            MosModel::new(cfg, args.seed)?
        }
    };
    let lite_layers = PointHeadConfig::lite();
    let lite_cfg = ModelConfig {
        point_head: PointHeadConfig {
            sparse_layers: lite_layers.sparse_layers,
            mlp_layers: lite_layers.mlp_layers,
            ..model.config.point_head.clone()
        },
        ..model.config.clone()
    };
    let mut lite = MosModel::new(lite_cfg, args.seed)?;
    lite.store.load_matching(&model.store)?;
    Ok((model, lite))
}

pub fn run(args: &BenchArgs) -> Result<()> {
    if args.iters == 0 {
        return Err(Error::Config("--iters must be at least 1".into()));
    }
    let (model, lite) = models(args)?;
    let proj = model.config.projection;
    let n_res = model.config.network.n_res;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let frames: Vec<Frame> = (0..=n_res)
        .map(|t| Frame {
            cloud: random_cloud(args.points, &proj, t, &mut rng),
            pose: Pose::from_translation(0.5 * t as f64, 0.0, 0.0),
            labels: None,
        })
        .collect();
    let seq = ScanSequence::new("bench", frames)?;
    let cloud = &seq.frame(n_res).cloud;
    let image = build_range_image(cloud, &proj);
    let sample = Sample {
        sequence_id: "bench".into(),
        frame_id: n_res,
        cloud: cloud.clone(),
        image: image.clone(),
        residuals: build_residual_stack_with(&seq, n_res, n_res, &proj, &image)?,
        labels: Vec::new(),
    };
    let knn = KnnConfig::default();
    let (w, n) = (args.warmup, args.iters);
    let rows = [
        time("projection", w, n, || Ok(build_range_image(cloud, &proj)))?,
        time("residuals", w, n, || {
            build_residual_stack_with(&seq, n_res, n_res, &proj, &image)
        })?,
        time("forward v1", w, n, || {
            model.predict(&sample, HeadMode::Image, PostMode::None, &knn)
        })?,
        time("forward v2", w, n, || {
            model.predict(&sample, HeadMode::Point, PostMode::None, &knn)
        })?,
        time("forward v2-Lite", w, n, || {
            lite.predict(&sample, HeadMode::Point, PostMode::None, &knn)
        })?,
    ];

    println!(
        "{} points, {}x{} image, {} residuals, {} iterations after {} warmup",
        args.points, proj.height, proj.width, n_res, n, w
    );
    println!("{:<16} {:>10} {:>10} {:>10}", "stage", "mean_ms", "min_ms", "max_ms");
    let mut csv = String::from("stage,mean_ms,min_ms,max_ms\n");
    for r in &rows {
        println!("{:<16} {:>10.3} {:>10.3} {:>10.3}", r.name, r.mean(), r.min(), r.max());
        csv.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.name, r.mean(), r.min(), r.max()));
    }
    if let Some(p) = &args.csv {
        write_atomic(p, csv.as_bytes())?;
    }
    Ok(())
}
