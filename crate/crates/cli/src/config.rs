//! The run configuration file shared by `train`, `eval` and `bench`.

use std::path::{Path, PathBuf};

use motionseg::lidar_io::LabelRemap;
use motionseg::pipeline::ModelConfig;
use motionseg::postprocess::KnnConfig;
use motionseg::training::TrainConfig;
use motionseg::{Error, Result};
use serde::{Deserialize, Serialize};

/// Where the data lives and how it is split. Relative paths are taken
/// relative to the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub root: PathBuf,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    /// Share of static frames kept for training.
    pub static_ratio: f64,
    /// Label remap table; the built-in table when absent.
    pub remap: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data"),
            train: vec!["00".into()],
            val: Vec::new(),
            test: Vec::new(),
            static_ratio: 1.0,
            remap: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub knn: KnnConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.data.root = base.join(&cfg.data.root);
        cfg.data.remap = cfg.data.remap.map(|r| base.join(r));
        Ok(cfg)
    }

    /// The file given on the command line, or defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.knn.validate()?;
        let r = self.data.static_ratio;
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::Config(format!("static_ratio must lie in (0, 1], got {r}")));
        }
        Ok(())
    }

    pub fn remap(&self) -> Result<LabelRemap> {
        match &self.data.remap {
            Some(p) => LabelRemap::load(p),
            None => Ok(LabelRemap::default()),
        }
    }
}
