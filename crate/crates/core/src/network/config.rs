use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Soft,
    Average,
}

/// `Dual` is the two-encoder network with attention fusion; `Concat` feeds
/// range and residual channels stacked into a single encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchMode {
    Dual,
    Concat,
}

/// Topology of the 2D range-image network. Stage `s` of the encoder has
/// `base_channels · 2^s` channels; the motion encoder uses
/// `motion_channels · 2^s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
    pub motion_channels: usize,
    pub depth: usize,
    pub n_res: usize,
    pub head_classes: usize,
    /// Fusion points: 0 is the context output, `s ≥ 1` the output of
    /// encoder stage `s` before pooling.
    pub attention_scales: Vec<usize>,
    pub meta_kernel: bool,
    pub meta_hidden: usize,
    pub pool: PoolKind,
    pub dropout: f64,
    pub encoder_dropout: bool,
    pub decoder_dropout: bool,
    pub circular_width: bool,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub mode: BranchMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 256,
            base_channels: 16,
            motion_channels: 8,
            depth: 3,
            n_res: 8,
            head_classes: 2,
            attention_scales: vec![0, 1, 2, 3],
            meta_kernel: true,
            meta_hidden: 16,
            pool: PoolKind::Soft,
            dropout: 0.2,
            encoder_dropout: true,
            decoder_dropout: true,
            circular_width: true,
            leaky_slope: 0.01,
            bn_momentum: 0.1,
            mode: BranchMode::Dual,
        }
    }
}

impl NetworkConfig {
    /// Small configuration for gradient checks.
    pub fn tiny(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            base_channels: 4,
            motion_channels: 2,
            depth: 2,
            n_res: 2,
            attention_scales: vec![0, 1, 2],
            meta_hidden: 4,
            dropout: 0.0,
            ..Self::default()
        }
    }

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

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network config serializes")
    }

    pub fn stage_channels(&self, s: usize) -> usize {
        self.base_channels << s
    }

    pub fn motion_stage_channels(&self, s: usize) -> usize {
        self.motion_channels << s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.depth == 0 {
            return fail("depth must be at least 1".into());
        }
        let step = 1usize << self.depth;
        if !self.height.is_multiple_of(step) || !self.width.is_multiple_of(step) {
            return fail(format!(
                "image {}x{} not divisible by 2^depth = {step}",
                self.height, self.width
            ));
        }
        if self.base_channels == 0 || !self.base_channels.is_multiple_of(2) {
            return fail("base_channels must be even and positive".into());
        }
        if self.mode == BranchMode::Dual && self.motion_channels == 0 {
            return fail("motion_channels must be positive".into());
        }
        if self.n_res == 0 {
            return fail("n_res must be at least 1".into());
        }
        if !(2..=3).contains(&self.head_classes) {
            return fail(format!("head_classes must be 2 or 3, got {}", self.head_classes));
        }
        if let Some(s) = self.attention_scales.iter().find(|s| **s > self.depth) {
            return fail(format!("attention scale {s} beyond depth {}", self.depth));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0,1)", self.dropout));
        }
        if self.meta_kernel && self.meta_hidden == 0 {
            return fail("meta_hidden must be positive".into());
        }
        Ok(())
    }
}
