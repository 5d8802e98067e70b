//! 2D convolution (cross-correlation) via im2col + GEMM.

use std::rc::Rc;

use crate::autodiff::real::matmul;
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Geometry of a 2D convolution. With `circular_width` the width axis wraps
/// around (azimuth periodicity) instead of being zero padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
    pub circular_width: bool,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            dilation: (1, 1),
            padding: (0, 0),
            circular_width: false,
        }
    }
}

impl Conv2dSpec {
    /// Stride 1, padding chosen to keep the spatial size for odd kernels.
    pub fn same(kernel: usize, dilation: usize, circular_width: bool) -> Self {
        let pad = dilation * (kernel - 1) / 2;
        Self {
            stride: (1, 1),
            dilation: (dilation, dilation),
            padding: (pad, pad),
            circular_width,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: Conv2dSpec,
}

impl Geometry {
    fn k(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == (1, 1) && self.spec.padding == (0, 0)
    }

    /// Input column for output column `wo` and kernel column `kw`, if any.
    #[inline]
    fn in_col(&self, wo: usize, kw: usize) -> Option<usize> {
        let c = (wo * self.spec.stride.1 + kw * self.spec.dilation.1) as isize - self.spec.padding.1 as isize;
        if self.spec.circular_width {
            Some(c.rem_euclid(self.w as isize) as usize)
        } else if c >= 0 && (c as usize) < self.w {
            Some(c as usize)
        } else {
            None
        }
    }

    #[inline]
    fn in_row(&self, ho: usize, kh: usize) -> Option<usize> {
        let r = (ho * self.spec.stride.0 + kh * self.spec.dilation.0) as isize - self.spec.padding.0 as isize;
        if r >= 0 && (r as usize) < self.h {
            Some(r as usize)
        } else {
            None
        }
    }

    /// Column index table `[kw][wo]`, `usize::MAX` for padding.
    fn col_table(&self) -> Vec<usize> {
        let mut t = Vec::with_capacity(self.kw * self.wo);
        for kw in 0..self.kw {
            for wo in 0..self.wo {
                t.push(self.in_col(wo, kw).unwrap_or(usize::MAX));
            }
        }
        t
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T], table: &[usize]) {
        let (hw, p) = (self.h * self.w, self.p());
        let mut row = 0;
        for c in 0..self.ci {
            let plane = &x[c * hw..(c + 1) * hw];
            for kh in 0..self.kh {
                for kw in 0..self.kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let tab = &table[kw * self.wo..(kw + 1) * self.wo];
                    for ho in 0..self.ho {
                        let seg = &mut dst[ho * self.wo..(ho + 1) * self.wo];
                        match self.in_row(ho, kh) {
                            None => seg.iter_mut().for_each(|v| *v = T::zero()),
                            Some(r) => {
                                let src = &plane[r * self.w..(r + 1) * self.w];
                                for (s, &ci) in seg.iter_mut().zip(tab) {
                                    *s = if ci == usize::MAX { T::zero() } else { src[ci] };
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T], table: &[usize]) {
        let (hw, p) = (self.h * self.w, self.p());
        let mut row = 0;
        for c in 0..self.ci {
            let plane = &mut dx[c * hw..(c + 1) * hw];
            for kh in 0..self.kh {
                for kw in 0..self.kw {
                    let src = &cols[row * p..(row + 1) * p];
                    let tab = &table[kw * self.wo..(kw + 1) * self.wo];
                    for ho in 0..self.ho {
                        if let Some(r) = self.in_row(ho, kh) {
                            let dst = &mut plane[r * self.w..(r + 1) * self.w];
                            for (s, &ci) in src[ho * self.wo..(ho + 1) * self.wo].iter().zip(tab) {
                                if ci != usize::MAX {
                                    dst[ci] += *s;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// NCHW convolution with weight `[C_out, C_in, KH, KW]` and optional
    /// bias `[C_out]`.
    pub fn conv2d(&self, x: Var, weight: Var, bias: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(weight);
        let (n, ci, h, w) = xv.dims4()?;
        let (co, wci, kh, kw) = wv.dims4()?;
        if wci != ci {
            return Err(Error::Shape(format!(
                "conv2d: input has {ci} channels, weight expects {wci}"
            )));
        }
        let bv = match bias {
            Some(b) => {
                let bv = self.value(b);
                if bv.shape() != [co] {
                    return Err(Error::Shape(format!(
                        "conv2d: bias shape {:?}, want [{co}]",
                        bv.shape()
                    )));
                }
                Some(bv)
            }
            None => None,
        };
        let (sh, sw) = spec.stride;
        let (dh, dw) = spec.dilation;
        if sh == 0 || sw == 0 || dh == 0 || dw == 0 {
            return Err(Error::Shape("conv2d: stride and dilation must be >= 1".into()));
        }
        let span_h = dh * (kh - 1) + 1;
        let span_w = dw * (kw - 1) + 1;
        if h + 2 * spec.padding.0 < span_h || w + 2 * spec.padding.1 < span_w {
            return Err(Error::Shape(format!(
                "conv2d: kernel span {span_h}x{span_w} exceeds padded input {h}x{w}"
            )));
        }
        let ho = (h + 2 * spec.padding.0 - span_h) / sh + 1;
        let wo = (w + 2 * spec.padding.1 - span_w) / sw + 1;
        let geo = Geometry {
            ci,
            h,
            w,
            kh,
            kw,
            ho,
            wo,
            spec,
        };
        let (k, p) = (geo.k(), geo.p());
        let table = Rc::new(geo.col_table());
        let mut out = vec![T::zero(); n * co * p];
        let mut cols = if geo.pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); k * p]
        };
        for b in 0..n {
            let xb = &xv.data()[b * ci * h * w..(b + 1) * ci * h * w];
            let src: &[T] = if geo.pointwise() {
                xb
            } else {
                geo.im2col(xb, &mut cols, &table);
                &cols
            };
            let ob = &mut out[b * co * p..(b + 1) * co * p];
            if let Some(bv) = &bv {
                for (c, chunk) in ob.chunks_exact_mut(p).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = bv.data()[c]);
                }
            }
            matmul(co, k, p, wv.data(), false, src, false, ob, bv.is_some());
        }
        let out = Tensor::new(vec![n, co, ho, wo], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push_op(out, &inputs, move |g, grads| {
            let gd = g.data();
            if let Some(b) = bias {
                if let Some(gb) = grads.buffer(b) {
                    for bi in 0..n {
                        for c in 0..co {
                            let s = &gd[(bi * co + c) * p..(bi * co + c + 1) * p];
                            gb[c] += s.iter().fold(T::zero(), |a, v| a + *v);
                        }
                    }
                }
            }
            let want_w = grads.wants(weight);
            let want_x = grads.wants(x);
            let mut cols = if geo.pointwise() {
                Vec::new()
            } else {
                vec![T::zero(); k * p]
            };
            if want_w {
                let mut gw = vec![T::zero(); co * k];
                for bi in 0..n {
                    let xb = &xv.data()[bi * ci * h * w..(bi + 1) * ci * h * w];
                    let src: &[T] = if geo.pointwise() {
                        xb
                    } else {
                        geo.im2col(xb, &mut cols, &table);
                        &cols
                    };
                    // gW[co×k] += gY[co×p] · colsᵀ
                    matmul(
                        co,
                        p,
                        k,
                        &gd[bi * co * p..(bi + 1) * co * p],
                        false,
                        src,
                        true,
                        &mut gw,
                        true,
                    );
                }
                grads.add(weight, Tensor::new(wv.shape().to_vec(), gw).unwrap());
            }
            if want_x {
                let mut gx = vec![T::zero(); n * ci * h * w];
                for bi in 0..n {
                    let gxb = &mut gx[bi * ci * h * w..(bi + 1) * ci * h * w];
                    let gyb = &gd[bi * co * p..(bi + 1) * co * p];
                    if geo.pointwise() {
                        // gX[ci×p] = Wᵀ · gY
                        matmul(ci, co, p, wv.data(), true, gyb, false, gxb, false);
                    } else {
                        matmul(k, co, p, wv.data(), true, gyb, false, &mut cols, false);
                        geo.col2im(&cols, gxb, &table);
                    }
                }
                grads.add(x, Tensor::new(vec![n, ci, h, w], gx).unwrap());
            }
        }))
    }
}

/// Direct nested-loop convolution used as a test oracle.
#[cfg(test)]
pub(crate) fn conv2d_reference(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    spec: Conv2dSpec,
) -> Tensor<f64> {
    let (n, ci, h, wd) = x.dims4().unwrap();
    let (co, _, kh, kw) = w.dims4().unwrap();
    let ho = (h + 2 * spec.padding.0 - spec.dilation.0 * (kh - 1) - 1) / spec.stride.0 + 1;
    let wo = (wd + 2 * spec.padding.1 - spec.dilation.1 * (kw - 1) - 1) / spec.stride.1 + 1;
    let mut out = Tensor::zeros(&[n, co, ho, wo]);
    for bi in 0..n {
        for o in 0..co {
            for r in 0..ho {
                for c in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for i in 0..ci {
                        for a in 0..kh {
                            for e in 0..kw {
                                let ir = (r * spec.stride.0 + a * spec.dilation.0) as isize - spec.padding.0 as isize;
                                let mut ic =
                                    (c * spec.stride.1 + e * spec.dilation.1) as isize - spec.padding.1 as isize;
                                if spec.circular_width {
                                    ic = ic.rem_euclid(wd as isize);
                                }
                                if ir < 0 || ir >= h as isize || ic < 0 || ic >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((bi * ci + i) * h + ir as usize) * wd + ic as usize]
                                    * w.data()[((o * ci + i) * kh + a) * kw + e];
                            }
                        }
                    }
                    out.data_mut()[((bi * co + o) * ho + r) * wo + c] = acc;
                }
            }
        }
    }
    out
}
