use std::path::Path;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::lidar_io::MosLabel;
use crate::losses::{ClassFrequencies, LovaszClasses};
use crate::metrics::ConfusionCounts;
use crate::network::{NetInput, NET2D_PREFIX};
use crate::pipeline::{HeadMode, MosModel, PostMode};
use crate::point_refine::PointGeometry;
use crate::postprocess::KnnConfig;

use super::data::{input_statistics, AugmentConfig, Sample};
use super::optim::{sgd_step, SgdConfig, SgdState};

/// Classes averaged by the Lovász term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LovaszMode {
    Present,
    All,
    Moving,
}

impl LovaszMode {
    fn classes(self, head_classes: usize) -> LovaszClasses {
        match self {
            LovaszMode::Present => LovaszClasses::Present,
            LovaszMode::All => LovaszClasses::All,
            LovaszMode::Moving => LovaszClasses::Subset(vec![MosLabel::Moving.class_index(head_classes).unwrap_or(1)]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub sgd: SgdConfig,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub lovasz: LovaszMode,
    /// Stop a stage once validation IoU reaches this value.
    pub stop_at_iou: Option<f64>,
    /// Class frequencies for the loss weights; computed from the training
    /// split when absent.
    pub class_frequencies: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sgd: SgdConfig::default(),
            lr_decay: 0.99,
            stage1_epochs: 60,
            stage2_epochs: 20,
            batch_size: 2,
            seed: 0,
            augment: AugmentConfig::default(),
            lovasz: LovaszMode::Present,
            stop_at_iou: None,
            class_frequencies: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sgd;
        if !(s.lr > 0.0 && s.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", s.lr)));
        }
        if !(0.0..1.0).contains(&s.momentum) || !(s.weight_decay >= 0.0) {
            return Err(Error::Config(
                "momentum must lie in [0, 1) and weight decay be non-negative".into(),
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.augment.point_dropout) {
            return Err(Error::Config("point_dropout must lie in [0, 1)".into()));
        }
        if let Some(f) = &self.class_frequencies {
            if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Config(
                    "class frequencies must be finite and non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    fn frequencies(&self, classes: usize, truth: impl IntoIterator<Item = Option<usize>>) -> Result<ClassFrequencies> {
        match &self.class_frequencies {
            Some(f) if f.len() == classes => Ok(ClassFrequencies { frequencies: f.clone() }),
            Some(f) => Err(Error::Config(format!(
                "{} class frequencies for {classes} classes",
                f.len()
            ))),
            None => Ok(ClassFrequencies::from_labels(truth, classes)),
        }
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub stage: u8,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub wce: f64,
    pub lovasz: f64,
    pub clamped: usize,
    pub val_iou: f64,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub frequencies: Vec<f64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_iou: f64,
    pub records: Vec<LogRecord>,
}

/// Point-level confusion counts of the model over `samples`.
pub fn evaluate_samples(
    model: &MosModel,
    samples: &[Sample],
    head: HeadMode,
    post: PostMode,
    knn: &KnnConfig,
) -> Result<ConfusionCounts> {
    let mut total = ConfusionCounts::default();
    for chunk in samples.chunks(4) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let preds = model.predict_images(&refs)?;
        for (s, p) in chunk.iter().zip(&preds) {
            let labels = model.labels_from(s, p, head, post, knn)?;
            total.add(&ConfusionCounts::from_labels(&labels, &s.labels)?);
        }
    }
    Ok(total)
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} became {v}")))
    }
}

struct EpochLoss {
    loss: f64,
    wce: f64,
    lovasz: f64,
    clamped: usize,
    steps: usize,
}

impl EpochLoss {
    fn new() -> Self {
        Self {
            loss: 0.0,
            wce: 0.0,
            lovasz: 0.0,
            clamped: 0,
            steps: 0,
        }
    }

    fn mean(&self, x: f64) -> f64 {
        x / self.steps.max(1) as f64
    }
}

struct StageRun<'a> {
    stage: u8,
    cfg: &'a TrainConfig,
    best: Option<(f64, usize, ParamStore<f32>)>,
    records: Vec<LogRecord>,
}

impl StageRun<'_> {
    /// Records an epoch; returns true when training should stop.
    fn finish_epoch(
        &mut self,
        epoch: usize,
        lr: f64,
        acc: &EpochLoss,
        val_iou: f64,
        store: &ParamStore<f32>,
        sink: &mut dyn FnMut(&LogRecord) -> Result<()>,
    ) -> Result<bool> {
        let improved = self.best.as_ref().is_none_or(|(b, _, _)| val_iou > *b);
        if improved {
            self.best = Some((val_iou, epoch, store.clone()));
        }
        let rec = LogRecord {
            stage: self.stage,
            epoch,
            lr,
            loss: acc.mean(acc.loss),
            wce: acc.mean(acc.wce),
            lovasz: acc.mean(acc.lovasz),
            clamped: acc.clamped,
            val_iou,
            best: improved,
        };
        sink(&rec)?;
        self.records.push(rec);
        Ok(self.cfg.stop_at_iou.is_some_and(|t| val_iou >= t))
    }

    fn finish(self, model: &mut MosModel, frequencies: Vec<f64>) -> StageReport {
        let epochs_run = self.records.len();
        match self.best {
            Some((iou, epoch, store)) => {
                model.store = store;
                StageReport {
                    frequencies,
                    epochs_run,
                    best_epoch: epoch,
                    best_iou: iou,
                    records: self.records,
                }
            }
            None => StageReport {
                frequencies,
                epochs_run,
                best_epoch: 0,
                best_iou: 0.0,
                records: self.records,
            },
        }
    }
}

fn check_samples(model: &MosModel, samples: &[Sample], what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Config(format!("no {what} samples")));
    }
    let net = &model.config.network;
    for s in samples {
        if (s.image.height(), s.image.width()) != (net.height, net.width) || s.residuals.n_res() != net.n_res {
            return Err(Error::Config(format!(
                "{what} frame {} does not match the network input {}x{} with {} residuals",
                s.frame_id, net.height, net.width, net.n_res
            )));
        }
    }
    Ok(())
}

/// Trains the 2D network with the image loss. Input statistics are taken
/// from `train`; the best validation epoch is restored at the end.
pub fn train_stage1(
    model: &mut MosModel,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&LogRecord) -> Result<()>,
) -> Result<StageReport> {
    cfg.validate()?;
    check_samples(model, train, "training")?;
    let val = if val.is_empty() { train } else { val };
    check_samples(model, val, "validation")?;
    let k = model.classes();
    let (mean, std) = input_statistics(train);
    model.set_input_stats(mean, std);
    model.store.set_trainable_prefix("", true);

    let freq = cfg.frequencies(k, train.iter().flat_map(|s| s.pixel_truth(k)))?;
    let weights = freq.weights();
    let lovasz = cfg.lovasz.classes(k);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = SgdState::default();
    let mut run = StageRun {
        stage: 1,
        cfg,
        best: None,
        records: Vec::new(),
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step_seed = cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for epoch in 0..cfg.stage1_epochs {
        let lr = cfg.sgd.lr * cfg.lr_decay.powi(epoch as i32);
        let sgd = SgdConfig { lr, ..cfg.sgd };
        order.shuffle(&mut rng);
        let mut acc = EpochLoss::new();
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<Sample> = batch.iter().map(|&i| cfg.augment.apply(&train[i], &mut rng)).collect();
            let pairs: Vec<_> = samples.iter().map(|s| (&s.image, &s.residuals)).collect();
            let input = NetInput::<f32>::from_frames(&pairs)?;
            let truth: Vec<Option<usize>> = samples.iter().flat_map(|s| s.pixel_truth(k)).collect();
            step_seed = step_seed.wrapping_add(1);
            let tape = Tape::new(Mode::Train, step_seed);
            let out = model.net.forward(&tape, &model.store, &input)?;
            let rows = tape.nchw_to_rows(out.probs)?;
            let parts = tape.combined_loss(rows, Rc::new(truth), &weights, &lovasz)?;
            let total = tape.value(parts.total).data()[0] as f64;
            check_finite(total, "stage 1 loss")?;
            tape.backward(parts.total, &mut model.store)?;
            sgd_step(&mut model.store, &mut state, &sgd)?;
            model.store.apply_buffer_updates(tape.take_buffer_updates());
            acc.loss += total;
            acc.wce += tape.value(parts.wce).data()[0] as f64;
            acc.lovasz += tape.value(parts.lovasz).data()[0] as f64;
            acc.clamped += parts.clamped;
            acc.steps += 1;
        }
        let iou = evaluate_samples(model, val, HeadMode::Image, PostMode::None, &KnnConfig::default())?.iou();
        if run.finish_epoch(epoch, lr, &acc, iou, &model.store, sink)? {
            break;
        }
    }
    let report = run.finish(model, freq.frequencies);
    model.stage = model.stage.max(1);
    Ok(report)
}

/// Trains the point head on features of the frozen 2D network. Requires a
/// model that completed stage 1.
pub fn train_stage2(
    model: &mut MosModel,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&LogRecord) -> Result<()>,
) -> Result<StageReport> {
    cfg.validate()?;
    if model.stage < 1 {
        return Err(Error::Config("stage 2 needs a model trained by stage 1".into()));
    }
    check_samples(model, train, "training")?;
    let val = if val.is_empty() { train } else { val };
    check_samples(model, val, "validation")?;
    let k = model.classes();
    model.store.set_trainable_prefix("", true);
    model.store.set_trainable_prefix(NET2D_PREFIX, false);
    let frozen = model.store.fingerprint(NET2D_PREFIX);

    let features: Vec<Tensor<f32>> = train
        .chunks(4)
        .map(|c| model.predict_images(&c.iter().collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .map(|p| p.features)
        .collect();
    let geometry: Vec<PointGeometry> = train
        .iter()
        .map(|s| PointGeometry::new(&s.cloud, model.config.point_head.voxel_size))
        .collect::<Result<_>>()?;
    let freq = cfg.frequencies(k, train.iter().flat_map(|s| s.point_truth(k)))?;
    let weights = freq.weights();
    let lovasz = cfg.lovasz.classes(k);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut state = SgdState::default();
    let mut run = StageRun {
        stage: 2,
        cfg,
        best: None,
        records: Vec::new(),
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.stage2_epochs {
        let lr = cfg.sgd.lr * cfg.lr_decay.powi(epoch as i32);
        let sgd = SgdConfig { lr, ..cfg.sgd };
        order.shuffle(&mut rng);
        let mut acc = EpochLoss::new();
        for batch in order.chunks(cfg.batch_size) {
            let tape = Tape::<f32>::new(Mode::Train, 0);
            let mut probs = Vec::with_capacity(batch.len());
            let mut truth = Vec::new();
            for &i in batch {
                let s = &train[i];
                let f = tape.constant(features[i].clone());
                let rows = tape.nchw_to_rows(f)?;
                let out = model
                    .head
                    .forward(&tape, &model.store, rows, 0, &s.cloud, &s.image, &geometry[i])?;
                probs.push(out.probs);
                truth.extend(s.point_truth(k));
            }
            let probs = tape.concat(&probs, 0)?;
            let parts = tape.combined_loss(probs, Rc::new(truth), &weights, &lovasz)?;
            let total = tape.value(parts.total).data()[0] as f64;
            check_finite(total, "stage 2 loss")?;
            tape.backward(parts.total, &mut model.store)?;
            sgd_step(&mut model.store, &mut state, &sgd)?;
            if model.store.fingerprint(NET2D_PREFIX) != frozen {
                return Err(Error::Numeric("2D network parameters changed during stage 2".into()));
            }
            acc.loss += total;
            acc.wce += tape.value(parts.wce).data()[0] as f64;
            acc.lovasz += tape.value(parts.lovasz).data()[0] as f64;
            acc.clamped += parts.clamped;
            acc.steps += 1;
        }
        let iou = evaluate_samples(model, val, HeadMode::Point, PostMode::None, &KnnConfig::default())?.iou();
        if run.finish_epoch(epoch, lr, &acc, iou, &model.store, sink)? {
            break;
        }
    }
    let report = run.finish(model, freq.frequencies);
    model.store.set_trainable_prefix(NET2D_PREFIX, true);
    model.stage = model.stage.max(2);
    Ok(report)
}
