use crate::autodiff::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Running-statistics handles of a batch-normalization layer.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormStats {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Shape(format!("batch_norm needs rank >= 2, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

impl<T: Real> Tape<T> {
    /// Per-channel normalization over batch and spatial positions (axis 1 is
    /// the channel). Training mode uses batch statistics and records running
    /// statistic updates; evaluation mode uses the running statistics.
    pub fn batch_norm(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        store: &ParamStore<T>,
        stats: BatchNormStats,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, s) = channel_layout(xv.shape())?;
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::Shape(format!("batch_norm: affine params must be [{c}]")));
        }
        let eps = T::lit(stats.eps);
        let m = n * s;
        let d = xv.data();
        let at = move |b: usize, ch: usize, i: usize| (b * c + ch) * s + i;
        let (mean, var) = if self.is_training() {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut acc = T::zero();
                for b in 0..n {
                    for i in 0..s {
                        acc += d[at(b, ch, i)];
                    }
                }
                mean[ch] = acc / T::lit(m as f64);
                let mut acc = T::zero();
                for b in 0..n {
                    for i in 0..s {
                        let dv = d[at(b, ch, i)] - mean[ch];
                        acc += dv * dv;
                    }
                }
                var[ch] = acc / T::lit(m as f64);
            }
            let mom = T::lit(stats.momentum);
            let unbias = T::lit(m as f64 / (m.max(2) - 1) as f64);
            let rm = store.get(stats.running_mean).value.data();
            let rv = store.get(stats.running_var).value.data();
            let new_mean = (0..c).map(|ch| (T::one() - mom) * rm[ch] + mom * mean[ch]).collect();
            let new_var = (0..c)
                .map(|ch| (T::one() - mom) * rv[ch] + mom * var[ch] * unbias)
                .collect();
            self.record_buffer_update(stats.running_mean, Tensor::new(vec![c], new_mean)?);
            self.record_buffer_update(stats.running_var, Tensor::new(vec![c], new_var)?);
            (mean, var)
        } else {
            (
                store.get(stats.running_mean).value.data().to_vec(),
                store.get(stats.running_var).value.data().to_vec(),
            )
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); d.len()];
        let mut out = vec![T::zero(); d.len()];
        for b in 0..n {
            for ch in 0..c {
                for i in 0..s {
                    let k = at(b, ch, i);
                    xhat[k] = (d[k] - mean[ch]) * inv_std[ch];
                    out[k] = gv.data()[ch] * xhat[k] + bv.data()[ch];
                }
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let batch_stats = self.is_training();
        Ok(self.push_op(out, &[x, gamma, beta], move |g, grads| {
            let gd = g.data();
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    for i in 0..s {
                        let k = at(b, ch, i);
                        sum_g[ch] += gd[k];
                        sum_gx[ch] += gd[k] * xhat[k];
                    }
                }
            }
            if let Some(gg) = grads.buffer(gamma) {
                for ch in 0..c {
                    gg[ch] += sum_gx[ch];
                }
            }
            if let Some(gb) = grads.buffer(beta) {
                for ch in 0..c {
                    gb[ch] += sum_g[ch];
                }
            }
            if let Some(gx) = grads.buffer(x) {
                let gam = gv.data();
                let mf = T::lit(m as f64);
                for b in 0..n {
                    for ch in 0..c {
                        let scale = gam[ch] * inv_std[ch];
                        for i in 0..s {
                            let k = at(b, ch, i);
                            gx[k] += if batch_stats {
                                scale * (gd[k] - sum_g[ch] / mf - xhat[k] * sum_gx[ch] / mf)
                            } else {
                                scale * gd[k]
                            };
                        }
                    }
                }
            }
        }))
    }
}
