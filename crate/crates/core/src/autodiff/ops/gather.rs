use std::rc::Rc;

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

impl<T: Real> Tape<T> {
    /// Row gather `[V, C] -> [N, C]`; `None` rows are zero.
    pub fn gather_rows(&self, x: Var, index: Rc<Vec<Option<u32>>>) -> Result<Var> {
        let xv = self.value(x);
        let (v, c) = xv.dims2()?;
        if let Some(bad) = index.iter().flatten().find(|i| **i as usize >= v) {
            return Err(Error::Shape(format!("gather index {bad} out of {v} rows")));
        }
        let mut out = vec![T::zero(); index.len() * c];
        for (row, i) in out.chunks_exact_mut(c.max(1)).zip(index.iter()) {
            if let Some(i) = i {
                row.copy_from_slice(&xv.data()[*i as usize * c..(*i as usize + 1) * c]);
            }
        }
        let out = Tensor::new(vec![index.len(), c], out)?;
        Ok(self.push_op(out, &[x], move |g, grads| {
            if let Some(gx) = grads.buffer(x) {
                for (row, i) in g.data().chunks_exact(c.max(1)).zip(index.iter()) {
                    if let Some(i) = i {
                        let dst = &mut gx[*i as usize * c..(*i as usize + 1) * c];
                        for (a, b) in dst.iter_mut().zip(row) {
                            *a += *b;
                        }
                    }
                }
            }
        }))
    }

    /// Mean of the rows of `x: [N, C]` sharing a segment id: `[S, C]`.
    pub fn segment_mean(&self, x: Var, segments: Rc<Vec<u32>>, n_segments: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = xv.dims2()?;
        if segments.len() != n {
            return Err(Error::Shape(format!("{} segment ids for {n} rows", segments.len())));
        }
        let mut counts = vec![0usize; n_segments];
        for s in segments.iter() {
            counts[*s as usize] += 1;
        }
        let inv: Rc<Vec<T>> = Rc::new(
            counts
                .iter()
                .map(|k| {
                    if *k > 0 {
                        T::one() / T::lit(*k as f64)
                    } else {
                        T::zero()
                    }
                })
                .collect(),
        );
        let mut out = vec![T::zero(); n_segments * c];
        for (row, s) in xv.data().chunks_exact(c.max(1)).zip(segments.iter()) {
            let s = *s as usize;
            for (a, b) in out[s * c..(s + 1) * c].iter_mut().zip(row) {
                *a += *b * inv[s];
            }
        }
        let out = Tensor::new(vec![n_segments, c], out)?;
        Ok(self.push_op(out, &[x], move |g, grads| {
            if let Some(gx) = grads.buffer(x) {
                for (r, s) in segments.iter().enumerate() {
                    let s = *s as usize;
                    for k in 0..c {
                        gx[r * c + k] += g.data()[s * c + k] * inv[s];
                    }
                }
            }
        }))
    }

    /// Per-column maximum over rows sharing a segment id; ties go to the
    /// first row.
    pub fn segment_max(&self, x: Var, segments: Rc<Vec<u32>>, n_segments: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = xv.dims2()?;
        if segments.len() != n {
            return Err(Error::Shape(format!("{} segment ids for {n} rows", segments.len())));
        }
        let mut arg = vec![usize::MAX; n_segments * c];
        let d = xv.data();
        for (r, s) in segments.iter().enumerate() {
            let s = *s as usize;
            for k in 0..c {
                let a = &mut arg[s * c + k];
                if *a == usize::MAX || d[r * c + k] > d[*a] {
                    *a = r * c + k;
                }
            }
        }
        let out: Vec<T> = arg
            .iter()
            .map(|a| if *a == usize::MAX { T::zero() } else { d[*a] })
            .collect();
        let out = Tensor::new(vec![n_segments, c], out)?;
        Ok(self.push_op(out, &[x], move |g, grads| {
            if let Some(gx) = grads.buffer(x) {
                for (o, a) in arg.iter().enumerate() {
                    if *a != usize::MAX {
                        gx[*a] += g.data()[o];
                    }
                }
            }
        }))
    }
}
