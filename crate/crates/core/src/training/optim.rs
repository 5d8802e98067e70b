use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamKind, ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Velocity buffers, one per parameter in store order.
#[derive(Debug, Clone, Default)]
pub struct SgdState {
    pub velocity: Vec<Vec<f64>>,
}

/// `v ← μ·v + g + λ·θ` (λ only on weights), `θ ← θ − lr·v`, for every
/// trainable non-buffer parameter; gradients are zeroed afterwards. A
/// non-finite gradient aborts before anything is updated.
pub fn sgd_step<T: Real>(store: &mut ParamStore<T>, state: &mut SgdState, config: &SgdConfig) -> Result<()> {
    for (_, p) in store.iter() {
        if p.trainable && p.kind != ParamKind::Buffer {
            if let Some((i, g)) = p.grad.data().iter().enumerate().find(|(_, g)| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {g} in {} at element {i}",
                    p.name
                )));
            }
        }
    }
    if state.velocity.len() != store.len() {
        state.velocity = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
    }
    for (p, v) in store.iter_mut().zip(state.velocity.iter_mut()) {
        if !p.trainable || p.kind == ParamKind::Buffer {
            continue;
        }
        let wd = if p.kind == ParamKind::Weight {
            config.weight_decay
        } else {
            0.0
        };
        let grads = p.grad.data().to_vec();
        for ((theta, g), vel) in p.value.data_mut().iter_mut().zip(grads).zip(v.iter_mut()) {
            let t = theta.as_f64();
            *vel = config.momentum * *vel + g.as_f64() + wd * t;
            *theta = T::lit(t - config.lr * *vel);
        }
    }
    store.zero_grad();
    Ok(())
}
