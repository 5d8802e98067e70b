//! Convolution whose 3×3 weights are generated per pixel from the relative
//! Cartesian coordinates of the neighborhood.

use crate::autodiff::{neighbor_map, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

use super::layers::{Builder, Conv};

#[derive(Debug, Clone)]
pub struct MetaKernel {
    pub mlp1: Conv,
    pub mlp2: Conv,
    pub aggregate: Conv,
    pub channels: usize,
    pub circular: bool,
}

/// Neighbor coordinates relative to the center pixel, `[N·9, 3, H, W]`,
/// and the validity mask `[N·9, 1, H, W]`. A pair counts only when both
/// pixels are valid; masked entries are zero.
pub fn relative_coords<T: Real>(coords: &Tensor<T>, valid: &[bool], circular: bool) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = coords.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!(
            "meta kernel needs 3 coordinate channels, got {c}"
        )));
    }
    let hw = h * w;
    if valid.len() != n * hw {
        return Err(Error::Shape(format!(
            "valid mask has {} entries, want {}",
            valid.len(),
            n * hw
        )));
    }
    let map = neighbor_map(h, w, circular);
    let d = coords.data();
    let mut rel = vec![T::zero(); n * 9 * 3 * hw];
    let mut mask = vec![T::zero(); n * 9 * hw];
    for b in 0..n {
        for j in 0..9 {
            for p in 0..hw {
                let q = map[j * hw + p];
                if q == usize::MAX || !valid[b * hw + p] || !valid[b * hw + q] {
                    continue;
                }
                mask[(b * 9 + j) * hw + p] = T::one();
                for k in 0..3 {
                    let plane = (b * 3 + k) * hw;
                    rel[((b * 9 + j) * 3 + k) * hw + p] = d[plane + q] - d[plane + p];
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![n * 9, 3, h, w], rel)?,
        Tensor::new(vec![n * 9, 1, h, w], mask)?,
    ))
}

impl MetaKernel {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, cin: usize, cout: usize, hidden: usize, circular: bool) -> Self {
        Self {
            mlp1: Conv::pointwise(&mut b.sub("mlp1"), 3, hidden),
            mlp2: Conv::pointwise(&mut b.sub("mlp2"), hidden, cin),
            aggregate: Conv::pointwise(&mut b.sub("aggregate"), 9 * cin, cout),
            channels: cin,
            circular,
        }
    }

    /// `features: [N, C, H, W]`, `coords: [N, 3, H, W]` (x, y, z),
    /// `valid`: per-pixel mask of length `N·H·W`.
    pub fn forward<T: Real>(
        &self,
        tape: &Tape<T>,
        store: &ParamStore<T>,
        features: Var,
        coords: &Tensor<T>,
        valid: &[bool],
    ) -> Result<Var> {
        let (n, c, h, w) = tape.value(features).dims4()?;
        if c != self.channels {
            return Err(Error::Shape(format!(
                "meta kernel expects {} channels, got {c}",
                self.channels
            )));
        }
        if coords.shape() != [n, 3, h, w] {
            return Err(Error::Shape(format!(
                "coords shape {:?} does not match features {:?}",
                coords.shape(),
                [n, c, h, w]
            )));
        }
        let (rel, mask) = relative_coords(coords, valid, self.circular)?;
        let rel = tape.constant(rel);
        let mask = tape.constant(mask);
        let hidden = self.mlp1.forward(tape, store, rel)?;
        let hidden = tape.relu(hidden);
        let weights = self.mlp2.forward(tape, store, hidden)?;
        let weights = tape.mul(weights, mask)?;
        let neighbors = tape.neighbors3x3(features, self.circular)?;
        let g = tape.mul(weights, neighbors)?;
        let g = tape.reshape(g, &[n, 9 * c, h, w])?;
        self.aggregate.forward(tape, store, g)
    }
}
