use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn pooled_dims(shape: (usize, usize, usize, usize), window: (usize, usize)) -> Result<(usize, usize)> {
    let (_, _, h, w) = shape;
    let (kh, kw) = window;
    if kh == 0 || kw == 0 || h % kh != 0 || w % kw != 0 {
        return Err(Error::Shape(format!("pool window {kh}x{kw} does not tile {h}x{w}")));
    }
    Ok((h / kh, w / kw))
}

impl<T: Real> Tape<T> {
    /// Non-overlapping average pooling; the window must tile the input.
    pub fn avg_pool2d(&self, x: Var, window: (usize, usize)) -> Result<Var> {
        let xv = self.value(x);
        let dims = xv.dims4()?;
        let (n, c, h, w) = dims;
        let (ho, wo) = pooled_dims(dims, window)?;
        let (kh, kw) = window;
        let inv = T::one() / T::lit((kh * kw) as f64);
        let mut out = vec![T::zero(); n * c * ho * wo];
        let d = xv.data();
        for plane in 0..n * c {
            for r in 0..h {
                for col in 0..w {
                    out[(plane * ho + r / kh) * wo + col / kw] += d[(plane * h + r) * w + col] * inv;
                }
            }
        }
        let out = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push_op(out, &[x], move |g, grads| {
            if let Some(gx) = grads.buffer(x) {
                let gd = g.data();
                for plane in 0..n * c {
                    for r in 0..h {
                        for col in 0..w {
                            gx[(plane * h + r) * w + col] += gd[(plane * ho + r / kh) * wo + col / kw] * inv;
                        }
                    }
                }
            }
        }))
    }

    /// Average over the spatial dimensions: `[N, C, H, W] -> [N, C, 1, 1]`.
    pub fn mean_spatial(&self, x: Var) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        self.avg_pool2d(x, (h, w))
    }

    /// SoftPool: each window is replaced by `Σ xᵢ·e^{xᵢ} / Σ e^{xᵢ}`.
    pub fn softpool2d(&self, x: Var, window: (usize, usize)) -> Result<Var> {
        let xv = self.value(x);
        let dims = xv.dims4()?;
        let (n, c, h, w) = dims;
        let (ho, wo) = pooled_dims(dims, window)?;
        let (kh, kw) = window;
        let d = xv.data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        // Per-element normalized weights e^{x_i}/S, kept for the backward pass.
        let mut weights = vec![T::zero(); d.len()];
        for plane in 0..n * c {
            for orow in 0..ho {
                for ocol in 0..wo {
                    let idx = |i: usize, j: usize| (plane * h + orow * kh + i) * w + ocol * kw + j;
                    let mut m = T::neg_infinity();
                    for i in 0..kh {
                        for j in 0..kw {
                            m = m.max(d[idx(i, j)]);
                        }
                    }
                    let mut s = T::zero();
                    let mut num = T::zero();
                    for i in 0..kh {
                        for j in 0..kw {
                            let e = (d[idx(i, j)] - m).exp();
                            weights[idx(i, j)] = e;
                            s += e;
                            num += e * d[idx(i, j)];
                        }
                    }
                    for i in 0..kh {
                        for j in 0..kw {
                            weights[idx(i, j)] /= s;
                        }
                    }
                    out[(plane * ho + orow) * wo + ocol] = num / s;
                }
            }
        }
        let out_t = Tensor::new(vec![n, c, ho, wo], out)?;
        let y = out_t.clone();
        Ok(self.push_op(out_t, &[x], move |g, grads| {
            if let Some(gx) = grads.buffer(x) {
                // dy/dx_i = (e^{x_i}/S)·(1 + x_i − y)
                let (gd, yd, d) = (g.data(), y.data(), xv.data());
                for i in 0..d.len() {
                    let plane_idx = i / (h * w);
                    let r = (i / w) % h;
                    let col = i % w;
                    let o = (plane_idx * ho + r / kh) * wo + col / kw;
                    gx[i] += gd[o] * weights[i] * (T::one() + d[i] - yd[o]);
                }
            }
        }))
    }
}
