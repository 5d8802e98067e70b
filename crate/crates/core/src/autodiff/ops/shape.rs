use std::rc::Rc;

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

impl<T: Real> Tape<T> {
    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let old = xv.shape().to_vec();
        let out = (*xv).clone().reshaped(shape)?;
        Ok(self.push_op(out, &[x], move |g, grads| {
            grads.add(x, g.clone().reshaped(&old).unwrap());
        }))
    }

    /// Depth-to-space: `[N, C·r², H, W] -> [N, C, H·r, W·r]` with
    /// `out[c, h·r+i, w·r+j] = in[c·r² + i·r + j, h, w]`.
    pub fn pixel_shuffle(&self, x: Var, r: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, cin, h, w) = xv.dims4()?;
        if r == 0 || cin % (r * r) != 0 {
            return Err(Error::Shape(format!(
                "pixel_shuffle: {cin} channels not divisible by {r}²"
            )));
        }
        let c = cin / (r * r);
        let (ho, wo) = (h * r, w * r);
        let src_of = move |b: usize, ch: usize, y: usize, x_: usize| {
            let (hh, i) = (y / r, y % r);
            let (ww, j) = (x_ / r, x_ % r);
            ((b * cin + ch * r * r + i * r + j) * h + hh) * w + ww
        };
        let mut out = vec![T::zero(); xv.numel()];
        let d = xv.data();
        let mut o = 0;
        for b in 0..n {
            for ch in 0..c {
                for y in 0..ho {
                    for x_ in 0..wo {
                        out[o] = d[src_of(b, ch, y, x_)];
                        o += 1;
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push_op(out, &[x], move |g, grads| {
            if let Some(gx) = grads.buffer(x) {
                let gd = g.data();
                let mut o = 0;
                for b in 0..n {
                    for ch in 0..c {
                        for y in 0..ho {
                            for x_ in 0..wo {
                                gx[src_of(b, ch, y, x_)] += gd[o];
                                o += 1;
                            }
                        }
                    }
                }
            }
        }))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<Rc<Tensor<T>>> = xs.iter().map(|v| self.value(*v)).collect();
        let first = vals
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(Error::Shape(format!("concat axis {axis} out of range")));
        }
        for v in &vals {
            let s = v.shape();
            if s.len() != first.len() || s.iter().zip(&first).enumerate().any(|(d, (a, b))| d != axis && a != b) {
                return Err(Error::Shape(format!("concat: {s:?} incompatible with {first:?}")));
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let lens: Vec<usize> = vals.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut shape = first.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, len) in vals.iter().zip(&lens) {
                out.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let out = Tensor::new(shape, out)?;
        let xs = xs.to_vec();
        Ok(self.push_op(out, &xs.clone(), move |g, grads| {
            let gd = g.data();
            let mut offset = 0;
            for (v, len) in xs.iter().zip(&lens) {
                if let Some(gx) = grads.buffer(*v) {
                    for o in 0..outer {
                        let src = &gd[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        for (a, b) in gx[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                            *a += *b;
                        }
                    }
                }
                offset += len;
            }
        }))
    }

    /// `[N, C, H, W] -> [N·H·W, C]`: one row per pixel.
    pub fn nchw_to_rows(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4()?;
        let hw = h * w;
        let d = xv.data();
        let mut out = vec![T::zero(); d.len()];
        for b in 0..n {
            for ch in 0..c {
                for p in 0..hw {
                    out[(b * hw + p) * c + ch] = d[(b * c + ch) * hw + p];
                }
            }
        }
        let out = Tensor::new(vec![n * hw, c], out)?;
        Ok(self.push_op(out, &[x], move |g, grads| {
            if let Some(gx) = grads.buffer(x) {
                let gd = g.data();
                for b in 0..n {
                    for ch in 0..c {
                        for p in 0..hw {
                            gx[(b * c + ch) * hw + p] += gd[(b * hw + p) * c + ch];
                        }
                    }
                }
            }
        }))
    }

    /// 3×3 neighborhood gather: `[N, C, H, W] -> [N·9, C, H, W]` where slice
    /// `n·9 + j` holds the input shifted so each pixel sees neighbor `j`
    /// (row-major over offsets −1..=1). Out-of-image rows read zero; columns
    /// wrap when `circular_width`.
    pub fn neighbors3x3(&self, x: Var, circular_width: bool) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4()?;
        let map = Rc::new(neighbor_map(h, w, circular_width));
        let d = xv.data();
        let hw = h * w;
        let mut out = vec![T::zero(); n * 9 * c * hw];
        for b in 0..n {
            for j in 0..9 {
                let m = &map[j * hw..(j + 1) * hw];
                for ch in 0..c {
                    let src = &d[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                    let dst = &mut out[((b * 9 + j) * c + ch) * hw..((b * 9 + j) * c + ch + 1) * hw];
                    for (o, &s) in dst.iter_mut().zip(m) {
                        if s != usize::MAX {
                            *o = src[s];
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![n * 9, c, h, w], out)?;
        Ok(self.push_op(out, &[x], move |g, grads| {
            if let Some(gx) = grads.buffer(x) {
                let gd = g.data();
                for b in 0..n {
                    for j in 0..9 {
                        let m = &map[j * hw..(j + 1) * hw];
                        for ch in 0..c {
                            let src = &gd[((b * 9 + j) * c + ch) * hw..((b * 9 + j) * c + ch + 1) * hw];
                            let dst = &mut gx[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                            for (gv, &s) in src.iter().zip(m) {
                                if s != usize::MAX {
                                    dst[s] += *gv;
                                }
                            }
                        }
                    }
                }
            }
        }))
    }
}

/// For each of the 9 offsets and each pixel, the source pixel index or
/// `usize::MAX` when it falls outside the image.
pub fn neighbor_map(h: usize, w: usize, circular_width: bool) -> Vec<usize> {
    let mut map = Vec::with_capacity(9 * h * w);
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            for r in 0..h as isize {
                for c in 0..w as isize {
                    let rr = r + dy;
                    let mut cc = c + dx;
                    if circular_width {
                        cc = cc.rem_euclid(w as isize);
                    }
                    if rr < 0 || rr >= h as isize || cc < 0 || cc >= w as isize {
                        map.push(usize::MAX);
                    } else {
                        map.push(rr as usize * w + cc as usize);
                    }
                }
            }
        }
    }
    map
}
