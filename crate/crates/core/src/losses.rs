//! Weighted cross-entropy and Lovász-Softmax over per-item class
//! probabilities.

use std::rc::Rc;

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Floor applied to the true-class probability before taking its log.
pub const LOG_EPS: f64 = 1e-12;

/// Relative class frequencies and the derived `1/√f` loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFrequencies {
    pub frequencies: Vec<f64>,
}

impl ClassFrequencies {
    pub fn from_counts(counts: &[u64]) -> Self {
        let total: u64 = counts.iter().sum();
        let frequencies = counts
            .iter()
            .map(|c| if total == 0 { 0.0 } else { *c as f64 / total as f64 })
            .collect();
        Self { frequencies }
    }

    /// Counts labeled items per class (`None` entries are skipped).
    pub fn from_labels(labels: impl IntoIterator<Item = Option<usize>>, classes: usize) -> Self {
        let mut counts = vec![0u64; classes];
        for l in labels.into_iter().flatten() {
            counts[l] += 1;
        }
        Self::from_counts(&counts)
    }

    /// `α_i = 1/√f_i`; classes never observed get weight 0.
    pub fn weights(&self) -> Vec<f64> {
        self.frequencies
            .iter()
            .map(|f| if *f > 0.0 { 1.0 / f.sqrt() } else { 0.0 })
            .collect()
    }
}

/// Which classes the Lovász loss averages over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LovaszClasses {
    /// Classes occurring in the ground truth.
    Present,
    All,
    Subset(Vec<usize>),
}

#[derive(Debug, Clone, Copy)]
pub struct WceOutput {
    pub loss: Var,
    /// Items whose true-class probability fell below [`LOG_EPS`].
    pub clamped: usize,
}

fn check_inputs<T: Real>(tape: &Tape<T>, probs: Var, truth: &[Option<usize>]) -> Result<(usize, usize)> {
    let (m, k) = tape.value(probs).dims2()?;
    if truth.len() != m {
        return Err(Error::Shape(format!("{} labels for {m} items", truth.len())));
    }
    if let Some(bad) = truth.iter().flatten().find(|c| **c >= k) {
        return Err(Error::Shape(format!("label {bad} outside {k} classes")));
    }
    Ok((m, k))
}

/// Sorted Lovász data of one class: item order and the per-rank gradient of
/// the Jaccard extension.
fn lovasz_class<T: Real>(p: &[T], truth: &[Option<usize>], k: usize, class: usize) -> (Vec<usize>, Vec<T>, Vec<T>) {
    let items: Vec<usize> = (0..truth.len()).filter(|i| truth[*i].is_some()).collect();
    let fg: Vec<bool> = items.iter().map(|i| truth[*i] == Some(class)).collect();
    let err: Vec<T> = items
        .iter()
        .zip(&fg)
        .map(|(i, f)| {
            let pc = p[i * k + class];
            if *f {
                T::one() - pc
            } else {
                pc
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|a, b| {
        err[*b]
            .partial_cmp(&err[*a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });
    let gts = fg.iter().filter(|f| **f).count() as f64;
    let mut grad = Vec::with_capacity(order.len());
    let (mut cum_fg, mut cum_bg) = (0.0, 0.0);
    let mut prev = 0.0;
    for &o in &order {
        if fg[o] {
            cum_fg += 1.0;
        } else {
            cum_bg += 1.0;
        }
        let inter = gts - cum_fg;
        let union = gts + cum_bg;
        let jac = 1.0 - inter / union;
        grad.push(T::lit(jac - prev));
        prev = jac;
    }
    let sorted_items = order.iter().map(|o| items[*o]).collect();
    let sorted_err = order.iter().map(|o| err[*o]).collect();
    (sorted_items, sorted_err, grad)
}

impl<T: Real> Tape<T> {
    /// Mean over labeled items of `−α_y · log p_y`. `probs: [M, K]`;
    /// `None` truth entries are ignored.
    pub fn weighted_cross_entropy(
        &self,
        probs: Var,
        truth: Rc<Vec<Option<usize>>>,
        weights: &[f64],
    ) -> Result<WceOutput> {
        let (_, k) = check_inputs(self, probs, &truth)?;
        if weights.len() != k {
            return Err(Error::Shape(format!("{} class weights for {k} classes", weights.len())));
        }
        let pv = self.value(probs);
        let p = pv.data();
        let eps = T::lit(LOG_EPS);
        let labeled = truth.iter().filter(|t| t.is_some()).count();
        let mut total = T::zero();
        let mut clamped = 0;
        for (i, t) in truth.iter().enumerate() {
            if let Some(c) = t {
                let py = p[i * k + c];
                if py < eps {
                    clamped += 1;
                }
                total -= T::lit(weights[*c]) * py.max(eps).ln();
            }
        }
        let inv = if labeled > 0 {
            T::one() / T::lit(labeled as f64)
        } else {
            T::zero()
        };
        let out = Tensor::scalar(total * inv);
        let w: Vec<T> = weights.iter().map(|v| T::lit(*v)).collect();
        let loss = self.push_op(out, &[probs], move |g, grads| {
            if let Some(gp) = grads.buffer(probs) {
                let scale = g.data()[0] * inv;
                let p = pv.data();
                for (i, t) in truth.iter().enumerate() {
                    if let Some(c) = t {
                        let py = p[i * k + c];
                        if py >= eps {
                            gp[i * k + c] -= scale * w[*c] / py;
                        }
                    }
                }
            }
        });
        Ok(WceOutput { loss, clamped })
    }

    /// Lovász-Softmax: per class, errors sorted in decreasing order dotted
    /// with the gradient of the Jaccard loss extension, averaged over the
    /// selected classes.
    pub fn lovasz_softmax(&self, probs: Var, truth: Rc<Vec<Option<usize>>>, classes: &LovaszClasses) -> Result<Var> {
        let (_, k) = check_inputs(self, probs, &truth)?;
        let selected: Vec<usize> = match classes {
            LovaszClasses::All => (0..k).collect(),
            LovaszClasses::Present => (0..k).filter(|c| truth.contains(&Some(*c))).collect(),
            LovaszClasses::Subset(s) => {
                if let Some(bad) = s.iter().find(|c| **c >= k) {
                    return Err(Error::Shape(format!("class {bad} outside {k} classes")));
                }
                s.clone()
            }
        };
        let pv = self.value(probs);
        let per_class: Vec<_> = selected
            .iter()
            .map(|c| lovasz_class(pv.data(), &truth, k, *c))
            .collect();
        let inv = if selected.is_empty() {
            T::zero()
        } else {
            T::one() / T::lit(selected.len() as f64)
        };
        let mut total = T::zero();
        for (_, err, grad) in &per_class {
            for (e, g) in err.iter().zip(grad) {
                total += *e * *g;
            }
        }
        let out = Tensor::scalar(total * inv);
        Ok(self.push_op(out, &[probs], move |g, grads| {
            if let Some(gp) = grads.buffer(probs) {
                let scale = g.data()[0] * inv;
                for (c, (items, _, grad)) in selected.iter().zip(&per_class) {
                    for (i, gj) in items.iter().zip(grad) {
                        let sign = if truth[*i] == Some(*c) { -T::one() } else { T::one() };
                        gp[i * k + c] += scale * *gj * sign;
                    }
                }
            }
        }))
    }

    /// `L = L_wce + L_ls`.
    pub fn combined_loss(
        &self,
        probs: Var,
        truth: Rc<Vec<Option<usize>>>,
        weights: &[f64],
        classes: &LovaszClasses,
    ) -> Result<LossParts> {
        let wce = self.weighted_cross_entropy(probs, truth.clone(), weights)?;
        let lovasz = self.lovasz_softmax(probs, truth, classes)?;
        let total = self.add(wce.loss, lovasz)?;
        Ok(LossParts {
            total,
            wce: wce.loss,
            lovasz,
            clamped: wce.clamped,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub wce: Var,
    pub lovasz: Var,
    pub clamped: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(tape: &Tape<f64>, rows: &[[f64; 2]]) -> Var {
        tape.constant(Tensor::new(vec![rows.len(), 2], rows.iter().flatten().copied().collect()).unwrap())
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let tape = Tape::<f64>::eval();
        let p = probs(&tape, &[[1.0, 0.0], [0.0, 1.0]]);
        let truth = Rc::new(vec![Some(0), Some(1)]);
        let parts = tape
            .combined_loss(p, truth, &[1.0, 1.0], &LovaszClasses::Present)
            .unwrap();
        assert_eq!(tape.value(parts.total).data()[0], 0.0);
    }

    #[test]
    fn uniform_binary_prediction_costs_ln2() {
        let tape = Tape::<f64>::eval();
        let p = probs(&tape, &[[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]);
        let out = tape
            .weighted_cross_entropy(p, Rc::new(vec![Some(0), Some(1), None]), &[1.0, 1.0])
            .unwrap();
        assert!((tape.value(out.loss).data()[0] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_true_probability_is_clamped_and_flagged() {
        let tape = Tape::<f64>::eval();
        let p = probs(&tape, &[[0.0, 1.0]]);
        let out = tape
            .weighted_cross_entropy(p, Rc::new(vec![Some(0)]), &[1.0, 1.0])
            .unwrap();
        assert_eq!(out.clamped, 1);
        assert!((tape.value(out.loss).data()[0] + LOG_EPS.ln()).abs() < 1e-9);
    }

    #[test]
    fn single_item_lovasz_is_its_error() {
        let tape = Tape::<f64>::eval();
        let p = probs(&tape, &[[0.3, 0.7]]);
        let l = tape
            .lovasz_softmax(p, Rc::new(vec![Some(1)]), &LovaszClasses::Present)
            .unwrap();
        assert!((tape.value(l).data()[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn weights_follow_inverse_sqrt_frequency() {
        let f = ClassFrequencies::from_counts(&[75, 25, 0]);
        let w = f.weights();
        assert!((w[0] - 1.0 / 0.75f64.sqrt()).abs() < 1e-12);
        assert!((w[1] - 2.0).abs() < 1e-12);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let tape = Tape::<f64>::eval();
        let p = probs(&tape, &[[0.5, 0.5]]);
        assert!(tape
            .weighted_cross_entropy(p, Rc::new(vec![Some(2)]), &[1.0, 1.0])
            .is_err());
        assert!(tape
            .lovasz_softmax(p, Rc::new(vec![Some(0)]), &LovaszClasses::Subset(vec![3]))
            .is_err());
    }
}
