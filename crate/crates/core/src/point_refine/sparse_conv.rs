//! Submanifold sparse 3D convolution: output sites are the occupied input
//! sites, each gathering its occupied 3×3×3 neighbors.

use std::collections::HashMap;
use std::rc::Rc;

use crate::autodiff::{matmul, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

use super::voxel::{SparseVoxelGrid, VoxelLayout};

/// Number of kernel offsets.
pub const KERNEL_VOLUME: usize = 27;

/// Offset of kernel slot `k`, ordered with x slowest and z fastest.
pub fn kernel_offset(k: usize) -> [i32; 3] {
    [(k / 9) as i32 - 1, ((k / 3) % 3) as i32 - 1, (k % 3) as i32 - 1]
}

/// For every kernel offset, the `(output site, input site)` pairs where
/// the input site `output + offset` is occupied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rulebook {
    pub sites: usize,
    pub pairs: Vec<Vec<(u32, u32)>>,
}

impl Rulebook {
    pub fn new(coords: &[[i32; 3]]) -> Self {
        let index: HashMap<[i32; 3], u32> = coords.iter().enumerate().map(|(i, c)| (*c, i as u32)).collect();
        let pairs = (0..KERNEL_VOLUME)
            .map(|k| {
                let o = kernel_offset(k);
                coords
                    .iter()
                    .enumerate()
                    .filter_map(|(i, c)| {
                        index
                            .get(&[c[0] + o[0], c[1] + o[1], c[2] + o[2]])
                            .map(|j| (i as u32, *j))
                    })
                    .collect()
            })
            .collect();
        Self {
            sites: coords.len(),
            pairs,
        }
    }

    pub fn from_layout(layout: &VoxelLayout) -> Self {
        Self::new(&layout.coords)
    }
}

impl<T: Real> Tape<T> {
    /// `out[i] = bias + Σ_k Σ_{j ∈ N_k(i)} x[j] · W[k]` for
    /// `x: [V, C_in]`, `weight: [27, C_in, C_out]`, `bias: [C_out]`.
    pub fn sparse_conv3d(&self, x: Var, weight: Var, bias: Option<Var>, rules: Rc<Rulebook>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(weight);
        let (v, ci) = xv.dims2()?;
        if v != rules.sites {
            return Err(Error::Shape(format!("{v} feature rows for {} sites", rules.sites)));
        }
        let ws = wv.shape();
        if ws.len() != 3 || ws[0] != KERNEL_VOLUME || ws[1] != ci {
            return Err(Error::Shape(format!(
                "sparse conv weight {ws:?} does not match [27, {ci}, C_out]"
            )));
        }
        let co = ws[2];
        let mut out = vec![T::zero(); v * co];
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.shape() != [co] {
                return Err(Error::Shape(format!("sparse conv bias {:?}, want [{co}]", bv.shape())));
            }
            for row in out.chunks_exact_mut(co) {
                row.copy_from_slice(bv.data());
            }
        }
        let mut gathered = Vec::new();
        let mut partial = Vec::new();
        for (k, pairs) in rules.pairs.iter().enumerate() {
            if pairs.is_empty() {
                continue;
            }
            gathered.clear();
            for (_, j) in pairs {
                gathered.extend_from_slice(&xv.data()[*j as usize * ci..(*j as usize + 1) * ci]);
            }
            partial.clear();
            partial.resize(pairs.len() * co, T::zero());
            let wk = &wv.data()[k * ci * co..(k + 1) * ci * co];
            matmul(pairs.len(), ci, co, &gathered, false, wk, false, &mut partial, false);
            for (r, (i, _)) in pairs.iter().enumerate() {
                let dst = &mut out[*i as usize * co..(*i as usize + 1) * co];
                for (a, b) in dst.iter_mut().zip(&partial[r * co..(r + 1) * co]) {
                    *a += *b;
                }
            }
        }
        let out = Tensor::new(vec![v, co], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push_op(out, &inputs, move |g, grads| {
            let gd = g.data();
            if let Some(b) = bias {
                if let Some(gb) = grads.buffer(b) {
                    for row in gd.chunks_exact(co) {
                        for (a, r) in gb.iter_mut().zip(row) {
                            *a += *r;
                        }
                    }
                }
            }
            let want_w = grads.wants(weight);
            let want_x = grads.wants(x);
            let mut gw = if want_w {
                vec![T::zero(); KERNEL_VOLUME * ci * co]
            } else {
                Vec::new()
            };
            let mut gx = if want_x { vec![T::zero(); v * ci] } else { Vec::new() };
            let mut gy = Vec::new();
            let mut buf = Vec::new();
            for (k, pairs) in rules.pairs.iter().enumerate() {
                if pairs.is_empty() {
                    continue;
                }
                gy.clear();
                for (i, _) in pairs {
                    gy.extend_from_slice(&gd[*i as usize * co..(*i as usize + 1) * co]);
                }
                let p = pairs.len();
                if want_w {
                    buf.clear();
                    for (_, j) in pairs {
                        buf.extend_from_slice(&xv.data()[*j as usize * ci..(*j as usize + 1) * ci]);
                    }
                    // gW_k[ci×co] += X_kᵀ · gY_k
                    matmul(
                        ci,
                        p,
                        co,
                        &buf,
                        true,
                        &gy,
                        false,
                        &mut gw[k * ci * co..(k + 1) * ci * co],
                        true,
                    );
                }
                if want_x {
                    buf.clear();
                    buf.resize(p * ci, T::zero());
                    let wk = &wv.data()[k * ci * co..(k + 1) * ci * co];
                    matmul(p, co, ci, &gy, false, wk, true, &mut buf, false);
                    for (r, (_, j)) in pairs.iter().enumerate() {
                        let dst = &mut gx[*j as usize * ci..(*j as usize + 1) * ci];
                        for (a, b) in dst.iter_mut().zip(&buf[r * ci..(r + 1) * ci]) {
                            *a += *b;
                        }
                    }
                }
            }
            if want_w {
                grads.add(weight, Tensor::new(vec![KERNEL_VOLUME, ci, co], gw).unwrap());
            }
            if want_x {
                grads.add(x, Tensor::new(vec![v, ci], gx).unwrap());
            }
        }))
    }
}

/// Weights of one submanifold convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseConvLayer<T> {
    /// `[27, C_in, C_out]`, slot order as in [`kernel_offset`].
    pub weight: Tensor<T>,
    /// `[C_out]`.
    pub bias: Tensor<T>,
}

/// Applies one layer to a grid; output sites equal input sites.
pub fn sparse_conv3d<T: Real>(grid: &SparseVoxelGrid<T>, layer: &SparseConvLayer<T>) -> Result<SparseVoxelGrid<T>> {
    let ws = layer.weight.shape();
    if ws.len() != 3 || ws[0] != KERNEL_VOLUME || ws[1] != grid.features.shape()[1] {
        return Err(Error::Shape(format!(
            "layer weight {:?} does not match grid channels {}",
            ws,
            grid.features.shape()[1]
        )));
    }
    if grid.layout.is_empty() {
        return Ok(SparseVoxelGrid {
            layout: grid.layout.clone(),
            features: Tensor::zeros(&[0, ws[2]]),
        });
    }
    let tape = Tape::eval();
    let x = tape.constant(grid.features.clone());
    let w = tape.constant(layer.weight.clone());
    let b = tape.constant(layer.bias.clone());
    let rules = Rc::new(Rulebook::from_layout(&grid.layout));
    let y = tape.sparse_conv3d(x, w, Some(b), rules)?;
    Ok(SparseVoxelGrid {
        layout: grid.layout.clone(),
        features: (*tape.value(y)).clone(),
    })
}
