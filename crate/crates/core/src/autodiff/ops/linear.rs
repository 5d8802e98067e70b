use crate::autodiff::real::matmul;
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

impl<T: Real> Tape<T> {
    /// `x·Wᵀ + b` for `x: [M, C_in]`, `W: [C_out, C_in]`, `b: [C_out]`.
    pub fn linear(&self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(weight);
        let (m, ci) = xv.dims2()?;
        let (co, wci) = wv.dims2()?;
        if ci != wci {
            return Err(Error::Shape(format!("linear: input width {ci}, weight expects {wci}")));
        }
        let mut out = vec![T::zero(); m * co];
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.shape() != [co] {
                return Err(Error::Shape(format!(
                    "linear: bias shape {:?}, want [{co}]",
                    bv.shape()
                )));
            }
            for row in out.chunks_exact_mut(co) {
                row.copy_from_slice(bv.data());
            }
        }
        matmul(m, ci, co, xv.data(), false, wv.data(), true, &mut out, bias.is_some());
        let out = Tensor::new(vec![m, co], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push_op(out, &inputs, move |g, grads| {
            let gd = g.data();
            if let Some(b) = bias {
                if let Some(gb) = grads.buffer(b) {
                    for row in gd.chunks_exact(co) {
                        for (a, v) in gb.iter_mut().zip(row) {
                            *a += *v;
                        }
                    }
                }
            }
            if let Some(gw) = grads.buffer(weight) {
                // gW[co×ci] += gYᵀ · X
                matmul(co, m, ci, gd, true, xv.data(), false, gw, true);
            }
            if let Some(gx) = grads.buffer(x) {
                matmul(m, co, ci, gd, false, wv.data(), false, gx, true);
            }
        }))
    }
}
