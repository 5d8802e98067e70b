//! Motion-guided attention: spatial gating of appearance features by motion
//! features, then channel re-weighting with a residual connection.

use crate::autodiff::{ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};

use super::layers::{Builder, Conv};

#[derive(Debug, Clone)]
pub struct MotionAttention {
    pub spatial: Conv,
    pub channel: Conv,
    pub channels: usize,
}

/// Intermediate and final outputs of one fusion.
#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    pub gated: Var,
    pub fused: Var,
}

impl MotionAttention {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, appearance_channels: usize, motion_channels: usize) -> Self {
        Self {
            spatial: Conv::pointwise(&mut b.sub("spatial"), motion_channels, 1),
            channel: Conv::pointwise(&mut b.sub("channel"), appearance_channels, appearance_channels),
            channels: appearance_channels,
        }
    }

    /// `gated = f_a ⊗ σ(conv(f_m))`,
    /// `fused = gated ⊗ (softmax_c(conv(pool(gated)))·C) + f_a`.
    pub fn forward<T: Real>(
        &self,
        tape: &Tape<T>,
        store: &ParamStore<T>,
        f_a: Var,
        f_m: Var,
    ) -> Result<AttentionOutput> {
        let (na, _, ha, wa) = tape.value(f_a).dims4()?;
        let (nm, _, hm, wm) = tape.value(f_m).dims4()?;
        if (na, ha, wa) != (nm, hm, wm) {
            return Err(Error::Shape(format!(
                "attention: appearance {:?} vs motion {:?}",
                tape.shape(f_a),
                tape.shape(f_m)
            )));
        }
        let gate = self.spatial.forward(tape, store, f_m)?;
        let gate = tape.sigmoid(gate);
        let gated = tape.mul(f_a, gate)?;
        let pooled = tape.mean_spatial(gated)?;
        let logits = self.channel.forward(tape, store, pooled)?;
        let weights = tape.softmax(logits, 1)?;
        let weights = tape.scale(weights, T::lit(self.channels as f64));
        let reweighted = tape.mul(gated, weights)?;
        let fused = tape.add(reweighted, f_a)?;
        Ok(AttentionOutput { gated, fused })
    }
}
