//! Per-frame range-image artifacts. Every binary file starts with an 8-byte
//! magic and `height`, `width`, `channels` as u32 LE, followed by the data
//! channel-major:
//!
//! ```text
//! range/<frame>.bin   "MOSRIMG1", f32 LE x, y, z, r, e
//! index/<frame>.bin   "MOSIDX01", i32 LE source point per pixel, -1 if empty
//! ```
//!
//! `--residuals` adds `residuals/<frame>.res` in the residual cache format.

use std::path::PathBuf;

use clap::Args;
use motionseg::lidar_io::write_atomic;
use motionseg::projection::{build_range_image, render_range_rgb, write_png_rgb, RangeImage, NUM_CHANNELS};
use motionseg::residual::{build_residual_stack_with, encode_stack, render_residual_rgb};
use motionseg::Result;

use crate::data::{self, create_dir, StagedDir};
use crate::DataArgs;

pub const RANGE_MAGIC: &[u8; 8] = b"MOSRIMG1";
pub const INDEX_MAGIC: &[u8; 8] = b"MOSIDX01";

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub seq: String,
    /// Output root; artifacts go to `<out>/<seq>/`.
    #[arg(long)]
    pub out: PathBuf,
    /// Image height; overrides the configuration.
    #[arg(long)]
    pub height: Option<usize>,
    /// Image width; overrides the configuration.
    #[arg(long)]
    pub width: Option<usize>,
    /// Also write PNG previews.
    #[arg(long)]
    pub preview: bool,
    /// Also write residual stacks.
    #[arg(long)]
    pub residuals: bool,
}

fn header(magic: &[u8; 8], h: usize, w: usize, c: usize, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + len);
    out.extend_from_slice(magic);
    for v in [h, w, c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out
}

pub fn encode_range(image: &RangeImage) -> Vec<u8> {
    let mut out = header(
        RANGE_MAGIC,
        image.height(),
        image.width(),
        NUM_CHANNELS,
        4 * image.channels.len(),
    );
    for v in &image.channels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_index(image: &RangeImage) -> Vec<u8> {
    let mut out = header(INDEX_MAGIC, image.height(), image.width(), 1, 4 * image.index_map.len());
    for i in &image.index_map {
        let v = i.map_or(-1, |i| i as i32);
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn run(args: &ProjectArgs) -> Result<()> {
    let mut cfg = data::resolve(&args.data)?;
    let proj = &mut cfg.model.projection;
    proj.height = args.height.unwrap_or(proj.height);
    proj.width = args.width.unwrap_or(proj.width);
    proj.validate()?;
    let proj = *proj;
    let seq = data::load(&cfg.data.root, &args.seq, &cfg.remap()?)?;

    let target = args.out.join(&args.seq);
    let stage = StagedDir::new(&target)?;
    let dir = |name: &str| -> Result<PathBuf> {
        let d = stage.path().join(name);
        create_dir(&d)?;
        Ok(d)
    };
    let range_dir = dir("range")?;
    let index_dir = dir("index")?;
    let preview_dir = if args.preview { Some(dir("preview")?) } else { None };
    let res_dir = if args.residuals { Some(dir("residuals")?) } else { None };
    let n_res = cfg.model.network.n_res;

    for l in 0..seq.len() {
        let frame = seq.frame(l);
        let stem = format!("{:06}", frame.cloud.frame_id);
        let image = build_range_image(&frame.cloud, &proj);
        write_atomic(&range_dir.join(format!("{stem}.bin")), &encode_range(&image))?;
        write_atomic(&index_dir.join(format!("{stem}.bin")), &encode_index(&image))?;
        let labels = frame.labels.as_ref().map(|l| image.pixel_labels(&l.labels));
        if let Some(d) = &preview_dir {
            let rgb = render_range_rgb(&image, labels.as_deref());
            write_png_rgb(d.join(format!("{stem}.png")), proj.width, proj.height, &rgb)?;
        }
        if let Some(d) = &res_dir {
            let stack = build_residual_stack_with(&seq, l, n_res, &proj, &image)?;
            write_atomic(&d.join(format!("{stem}.res")), &encode_stack(&stack))?;
            if let (Some(p), true) = (&preview_dir, n_res > 0) {
                let rgb = render_residual_rgb(stack.channel(0), 0.5);
                write_png_rgb(p.join(format!("{stem}_res.png")), proj.width, proj.height, &rgb)?;
            }
        }
    }
    let meta = toml::to_string_pretty(&proj).expect("projection config serializes");
    write_atomic(&stage.path().join("projection.toml"), meta.as_bytes())?;
    stage.commit()?;
    println!(
        "projected {} frames at {}x{} into {}",
        seq.len(),
        proj.height,
        proj.width,
        target.display()
    );
    Ok(())
}
