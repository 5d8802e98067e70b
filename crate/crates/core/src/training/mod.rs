//! Two-stage training: the 2D network first, then the point head on frozen
//! 2D features.

mod data;
mod optim;
mod trainer;

pub use data::{build_samples, input_statistics, sample_training_frames, AugmentConfig, Sample};
pub use optim::{sgd_step, SgdConfig, SgdState};
pub use trainer::{evaluate_samples, train_stage1, train_stage2, LogRecord, LovaszMode, StageReport, TrainConfig};
