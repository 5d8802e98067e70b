//! Loading sequences into samples and writing output directories atomically.

use std::fs;
use std::path::{Path, PathBuf};

use motionseg::lidar_io::{load_sequence, sequence_dir, LabelRemap, ScanSequence};
use motionseg::residual::ResidualCache;
use motionseg::training::{build_samples, sample_training_frames, Sample};
use motionseg::{Error, Result};

use crate::config::RunConfig;
use crate::DataArgs;

pub fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.into(),
        source,
    }
}

/// The run configuration with command-line overrides applied.
pub fn resolve(args: &DataArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(root) = &args.data {
        cfg.data.root = root.clone();
    }
    Ok(cfg)
}

pub fn load(root: &Path, id: &str, remap: &LabelRemap) -> Result<ScanSequence> {
    let dir = sequence_dir(root, id);
    if !dir.is_dir() {
        return Err(io_err(
            &dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such sequence"),
        ));
    }
    load_sequence(root, id, remap)
}

pub enum Frames {
    All,
    /// Every dynamic frame plus a seeded share of the static ones.
    Training {
        ratio: f64,
        seed: u64,
    },
}

/// Labeled samples for the listed sequences at the model's geometry.
pub fn samples(cfg: &RunConfig, ids: &[String], frames: Frames, cache: Option<&Path>) -> Result<Vec<Sample>> {
    let remap = cfg.remap()?;
    let cache = cache.map(ResidualCache::new);
    let mut out = Vec::new();
    for id in ids {
        let seq = load(&cfg.data.root, id, &remap)?;
        let picked = match frames {
            Frames::All => (0..seq.len()).collect(),
            Frames::Training { ratio, seed } => sample_training_frames(&seq, ratio, seed)?,
        };
        if let Some(f) = seq.frames().iter().find(|f| f.labels.is_none()) {
            return Err(Error::Format {
                path: sequence_dir(&cfg.data.root, id).join("labels"),
                message: format!("no labels for frame {}", f.cloud.frame_id),
            });
        }
        out.extend(build_samples(
            &seq,
            &picked,
            &cfg.model.projection,
            cfg.model.network.n_res,
            cache.as_ref(),
        )?);
    }
    Ok(out)
}

/// A directory that is filled under a temporary name and renamed into place
/// on `commit`. Dropping it uncommitted removes the partial output.
pub struct StagedDir {
    staging: PathBuf,
    target: PathBuf,
    committed: bool,
}

impl StagedDir {
    pub fn new(target: &Path) -> Result<Self> {
        let parent = target
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let name = target
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| io_err(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| io_err(&staging, e))?;
        Ok(Self {
            staging,
            target: target.to_path_buf(),
            committed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    /// Replaces any previous output at the target.
    pub fn commit(self) -> Result<()> {
        self.commit_from(Path::new(""))
    }

    /// Moves the staged subdirectory `inner` to the target and discards the
    /// rest of the staging area.
    pub fn commit_from(mut self, inner: &Path) -> Result<()> {
        if let Some(parent) = self.target.parent() {
            create_dir(parent)?;
        }
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(|e| io_err(&self.target, e))?;
        }
        let source = self.staging.join(inner);
        fs::rename(&source, &self.target).map_err(|e| io_err(&self.target, e))?;
        self.committed = true;
        if self.staging.exists() {
            fs::remove_dir_all(&self.staging).map_err(|e| io_err(&self.staging, e))?;
        }
        Ok(())
    }
}

impl Drop for StagedDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}
