//! A trained model bundle: 2D network, point head, their parameters, and
//! inference in the three evaluation modes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{checkpoint, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::lidar_io::MosLabel;
use crate::network::{NetInput, NetworkConfig, RangeNet};
use crate::point_refine::{PointGeometry, PointHead, PointHeadConfig};
use crate::postprocess::{knn_refine, KnnConfig};
use crate::projection::{back_project_labels, ProjectionConfig, NUM_CHANNELS};
use crate::training::Sample;

/// Everything needed to rebuild a model's topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub projection: ProjectionConfig,
    pub network: NetworkConfig,
    pub point_head: PointHeadConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            projection: ProjectionConfig::desk(),
            network: NetworkConfig::default(),
            point_head: PointHeadConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.projection.validate()?;
        self.network.validate()?;
        self.point_head.validate()?;
        if (self.projection.height, self.projection.width) != (self.network.height, self.network.width) {
            return Err(Error::Config(format!(
                "projection {}x{} differs from network input {}x{}",
                self.projection.height, self.projection.width, self.network.height, self.network.width
            )));
        }
        Ok(())
    }
}

/// Which head produces the final per-point labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    Image,
    Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostMode {
    None,
    Knn,
}

/// Eval-mode outputs of the 2D network for one frame.
#[derive(Debug, Clone)]
pub struct ImagePrediction {
    /// `[classes, H, W]`.
    pub probs: Tensor<f32>,
    /// `[1, C, H, W]`.
    pub features: Tensor<f32>,
    pub pixel_labels: Vec<MosLabel>,
}

#[derive(Debug, Clone)]
pub struct MosModel {
    pub config: ModelConfig,
    pub net: RangeNet,
    pub head: PointHead,
    pub store: ParamStore<f32>,
    /// Number of completed training stages.
    pub stage: u8,
}

const FORMAT_TAG: &str = "motionseg-model";

impl MosModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let net = RangeNet::new(config.network.clone(), &mut store, seed)?;
        let head = PointHead::new(
            config.point_head.clone(),
            config.network.base_channels,
            config.network.head_classes,
            &mut store,
            seed.wrapping_add(1),
        )?;
        Ok(Self {
            config,
            net,
            head,
            store,
            stage: 0,
        })
    }

    pub fn set_input_stats(&mut self, mean: [f64; NUM_CHANNELS], std: [f64; NUM_CHANNELS]) {
        self.net.set_input_stats(&mut self.store, mean, std);
        self.head.set_input_stats(&mut self.store, mean, std);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "format": FORMAT_TAG,
            "stage": self.stage,
            "config": self.config,
        });
        checkpoint::save(path, &self.store, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (stored, meta) = checkpoint::load::<f32>(path)?;
        if meta.get("format").and_then(|v| v.as_str()) != Some(FORMAT_TAG) {
            return Err(Error::Checkpoint(format!(
                "{} is not a model checkpoint",
                path.display()
            )));
        }
        let config: ModelConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        let stage = meta.get("stage").and_then(|v| v.as_u64()).unwrap_or(0) as u8;
        let mut model = Self::new(config, 0)?;
        let copied = model.store.load_matching(&stored)?;
        if copied != model.store.len() || stored.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model {}, matched {copied}",
                stored.len(),
                model.store.len()
            )));
        }
        model.stage = stage;
        Ok(model)
    }

    pub fn classes(&self) -> usize {
        self.config.network.head_classes
    }

    /// Runs the 2D network in evaluation mode on a batch of frames.
    pub fn predict_images(&self, samples: &[&Sample]) -> Result<Vec<ImagePrediction>> {
        let pairs: Vec<_> = samples.iter().map(|s| (&s.image, &s.residuals)).collect();
        let input = NetInput::<f32>::from_frames(&pairs)?;
        let tape = Tape::eval();
        let out = self.net.forward(&tape, &self.store, &input)?;
        let probs = tape.value(out.probs);
        let feats = tape.value(out.features);
        let (n, k, h, w) = probs.dims4()?;
        let c = feats.shape()[1];
        let hw = h * w;
        Ok((0..n)
            .map(|b| {
                let p = &probs.data()[b * k * hw..(b + 1) * k * hw];
                let pixel_labels = (0..hw)
                    .map(|q| {
                        let best = (0..k).fold(0, |a, j| if p[j * hw + q] > p[a * hw + q] { j } else { a });
                        MosLabel::from_class_index(best, k)
                    })
                    .collect();
                ImagePrediction {
                    probs: Tensor::new(vec![k, h, w], p.to_vec()).unwrap(),
                    features: Tensor::new(vec![1, c, h, w], feats.data()[b * c * hw..(b + 1) * c * hw].to_vec())
                        .unwrap(),
                    pixel_labels,
                }
            })
            .collect())
    }

    /// Point-head probabilities `[P, classes]` from precomputed features.
    pub fn point_probs(&self, sample: &Sample, features: &Tensor<f32>) -> Result<Tensor<f32>> {
        let tape = Tape::eval();
        let f = tape.constant(features.clone());
        let rows = tape.nchw_to_rows(f)?;
        let geom = PointGeometry::new(&sample.cloud, self.config.point_head.voxel_size)?;
        let out = self
            .head
            .forward(&tape, &self.store, rows, 0, &sample.cloud, &sample.image, &geom)?;
        Ok((*tape.value(out.probs)).clone())
    }

    /// Final per-point labels of one frame given its image prediction.
    pub fn labels_from(
        &self,
        sample: &Sample,
        pred: &ImagePrediction,
        head: HeadMode,
        post: PostMode,
        knn: &KnnConfig,
    ) -> Result<Vec<MosLabel>> {
        match (head, post) {
            (HeadMode::Image, PostMode::None) => Ok(back_project_labels(&pred.pixel_labels, &sample.image)),
            (HeadMode::Image, PostMode::Knn) => knn_refine(&sample.cloud, &pred.pixel_labels, &sample.image, knn),
            (HeadMode::Point, PostMode::None) => {
                let probs = self.point_probs(sample, &pred.features)?;
                let k = self.classes();
                Ok(probs
                    .data()
                    .chunks_exact(k)
                    .map(|row| {
                        let best = (0..k).fold(0, |a, j| if row[j] > row[a] { j } else { a });
                        MosLabel::from_class_index(best, k)
                    })
                    .collect())
            }
            (HeadMode::Point, PostMode::Knn) => Err(Error::Config(
                "kNN post-processing applies to the image head only".into(),
            )),
        }
    }

    pub fn predict(&self, sample: &Sample, head: HeadMode, post: PostMode, knn: &KnnConfig) -> Result<Vec<MosLabel>> {
        let pred = self.predict_images(&[sample])?.remove(0);
        self.labels_from(sample, &pred, head, post, knn)
    }
}
