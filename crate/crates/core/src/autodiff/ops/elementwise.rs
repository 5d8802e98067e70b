use std::rc::Rc;

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Flat index into `b` for every flat index of `a`, where each dimension of
/// `b` either equals that of `a` or is 1.
fn broadcast_map(a: &[usize], b: &[usize]) -> Result<Option<Vec<usize>>> {
    if a == b {
        return Ok(None);
    }
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| *y != 1 && x != y) {
        return Err(Error::Shape(format!("cannot broadcast {b:?} to {a:?}")));
    }
    let rank = a.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for d in (0..rank).rev() {
        strides[d] = if b[d] == 1 { 0 } else { s };
        s *= b[d];
    }
    let n: usize = a.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < a[d] {
                break;
            }
            off -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    Ok(Some(out))
}

impl<T: Real> Tape<T> {
    /// `a + b`, with `b` broadcast along its size-1 dimensions.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let map = broadcast_map(av.shape(), bv.shape())?.map(Rc::new);
        let mut out = (*av).clone();
        match &map {
            None => out.add_assign(&bv),
            Some(m) => {
                for (o, j) in out.data_mut().iter_mut().zip(m.iter()) {
                    *o += bv.data()[*j];
                }
            }
        }
        let b_shape = bv.shape().to_vec();
        Ok(self.push_op(out, &[a, b], move |g, grads| {
            grads.add(a, g.clone());
            if grads.wants(b) {
                match &map {
                    None => grads.add(b, g.clone()),
                    Some(m) => {
                        let mut gb = Tensor::zeros(&b_shape);
                        for (gi, j) in g.data().iter().zip(m.iter()) {
                            gb.data_mut()[*j] += *gi;
                        }
                        grads.add(b, gb);
                    }
                }
            }
        }))
    }

    /// Element-wise `a ⊙ b`, with `b` broadcast along its size-1 dimensions.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let map = broadcast_map(av.shape(), bv.shape())?.map(Rc::new);
        let bi = |i: usize| map.as_ref().map_or(i, |m| m[i]);
        let out = Tensor::new(
            av.shape().to_vec(),
            av.data()
                .iter()
                .enumerate()
                .map(|(i, x)| *x * bv.data()[bi(i)])
                .collect(),
        )?;
        Ok(self.push_op(out, &[a, b], move |g, grads| {
            let bi = |i: usize| map.as_ref().map_or(i, |m| m[i]);
            if grads.wants(a) {
                let ga = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| *gi * bv.data()[bi(i)])
                    .collect();
                grads.add(a, Tensor::new(av.shape().to_vec(), ga).unwrap());
            }
            if let Some(gb) = grads.buffer(b) {
                for (i, gi) in g.data().iter().enumerate() {
                    gb[bi(i)] += *gi * av.data()[i];
                }
            }
        }))
    }

    pub fn scale(&self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push_op(out, &[x], move |g, grads| grads.add(x, g.map(|v| v * s)))
    }

    fn unary(&self, x: Var, f: impl Fn(T) -> T, df_from_out: impl Fn(T, T) -> T + 'static) -> Var {
        let xv = self.value(x);
        let out = xv.map(f);
        let out_rc = Rc::new(out.clone());
        self.push_op(out, &[x], move |g, grads| {
            if grads.wants(x) {
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .zip(out_rc.data())
                    .map(|((gi, xi), yi)| *gi * df_from_out(*xi, *yi))
                    .collect();
                grads.add(x, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
        })
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), |_, y| y * (T::one() - y))
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(
            x,
            |v| v.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, x: Var, slope: T) -> Var {
        self.unary(
            x,
            move |v| if v > T::zero() { v } else { v * slope },
            move |x, _| if x > T::zero() { T::one() } else { slope },
        )
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self, x: Var) -> Var {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        self.push_op(Tensor::scalar(xv.sum()), &[x], move |g, grads| {
            grads.add(x, Tensor::full(&shape, g.data()[0]))
        })
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = T::lit(self.value(x).numel().max(1) as f64);
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// Softmax along `axis`, max-shifted for stability.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("softmax axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![T::zero(); xv.numel()];
        let d = xv.data();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let m = (0..len).map(|k| d[at(k)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for k in 0..len {
                    let e = (d[at(k)] - m).exp();
                    out[at(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    out[at(k)] /= z;
                }
            }
        }
        let y = Rc::new(Tensor::new(shape.clone(), out)?);
        let y_out = (*y).clone();
        Ok(self.push_op(y_out, &[x], move |g, grads| {
            if let Some(gx) = grads.buffer(x) {
                let (yd, gd) = (y.data(), g.data());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let dot = (0..len).fold(T::zero(), |acc, k| acc + gd[at(k)] * yd[at(k)]);
                        for k in 0..len {
                            gx[at(k)] += yd[at(k)] * (gd[at(k)] - dot);
                        }
                    }
                }
            }
        }))
    }

    /// Inverted dropout; identity in evaluation mode or when `p == 0`.
    pub fn dropout(&self, x: Var, p: f64) -> Var {
        if !self.is_training() || p <= 0.0 {
            return x;
        }
        let xv = self.value(x);
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = self.with_rng(|rng| {
            use rand::Rng;
            (0..xv.numel())
                .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
                .collect()
        });
        let out = Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().zip(&mask).map(|(a, m)| *a * *m).collect(),
        )
        .unwrap();
        self.push_op(out, &[x], move |g, grads| {
            let data = g.data().iter().zip(&mask).map(|(a, m)| *a * *m).collect();
            grads.add(x, Tensor::new(g.shape().to_vec(), data).unwrap());
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_of_zero_is_half() {
        let tape = Tape::<f64>::eval();
        let x = tape.constant(Tensor::zeros(&[3]));
        let y = tape.sigmoid(x);
        assert!(tape.value(y).data().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn softmax_of_constant_is_uniform() {
        let tape = Tape::<f64>::eval();
        let x = tape.constant(Tensor::full(&[2, 4, 3], 7.0));
        let y = tape.softmax(x, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|v| (*v - 0.25).abs() < 1e-15));
        assert!(tape.softmax(x, 3).is_err());
    }

    #[test]
    fn broadcast_mul_over_channels() {
        let tape = Tape::<f64>::eval();
        let a = tape.constant(Tensor::from_fn(&[1, 2, 1, 3], |i| i as f64));
        let b = tape.constant(Tensor::new(vec![1, 1, 1, 3], vec![1.0, 10.0, 100.0]).unwrap());
        let y = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 10.0, 200.0, 3.0, 40.0, 500.0]);
        let bad = tape.constant(Tensor::zeros(&[1, 3, 1, 1]));
        assert!(tape.mul(a, bad).is_err());
    }

    #[test]
    fn dropout_eval_is_identity() {
        let tape = Tape::<f64>::eval();
        let x = tape.constant(Tensor::full(&[10], 1.0));
        assert_eq!(tape.dropout(x, 0.5), x);
    }

    #[test]
    fn dropout_train_keeps_expectation_roughly() {
        let tape = Tape::<f64>::new(crate::autodiff::Mode::Train, 3);
        let x = tape.constant(Tensor::full(&[20000], 1.0));
        let y = tape.dropout(x, 0.2);
        let m = tape.value(y).sum() / 20000.0;
        assert!((m - 1.0).abs() < 0.05);
    }
}
