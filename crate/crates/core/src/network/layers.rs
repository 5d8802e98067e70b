//! Parameterized building blocks of the range-image network.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BatchNormStats, Conv2dSpec, ParamId, ParamKind, ParamStore, Real, Tape, Tensor, Var};
use crate::error::Result;

/// Registers parameters under a dotted name prefix with seeded
/// initialization.
pub struct Builder<'a, T: Real> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
    pub prefix: String,
}

impl<'a, T: Real> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng, prefix: &str) -> Self {
        Self {
            store,
            rng,
            prefix: prefix.to_owned(),
        }
    }

    pub fn sub(&mut self, name: &str) -> Builder<'_, T> {
        Builder {
            store: self.store,
            rng: self.rng,
            prefix: format!("{}.{name}", self.prefix),
        }
    }

    pub fn name(&self, leaf: &str) -> String {
        format!("{}.{leaf}", self.prefix)
    }

    pub fn uniform(&mut self, leaf: &str, shape: &[usize], fan_in: usize, kind: ParamKind) -> ParamId {
        let name = self.name(leaf);
        self.store.add_uniform(name, shape, fan_in, kind, self.rng)
    }

    pub fn constant(&mut self, leaf: &str, shape: &[usize], value: f64, kind: ParamKind) -> ParamId {
        let name = self.name(leaf);
        self.store.add(name, Tensor::full(shape, T::lit(value)), kind)
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv2dSpec,
}

impl Conv {
    pub fn new<T: Real>(
        b: &mut Builder<'_, T>,
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
        circular: bool,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        Self {
            weight: b.uniform("w", &[cout, cin, kernel, kernel], fan_in, ParamKind::Weight),
            bias: Some(b.uniform("b", &[cout], fan_in, ParamKind::Bias)),
            spec: Conv2dSpec::same(kernel, dilation, circular),
        }
    }

    pub fn pointwise<T: Real>(b: &mut Builder<'_, T>, cin: usize, cout: usize) -> Self {
        Self::new(b, cin, cout, 1, 1, false)
    }

    pub fn forward<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.conv2d(x, w, b, self.spec)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, cin: usize, cout: usize) -> Self {
        Self {
            weight: b.uniform("w", &[cout, cin], cin, ParamKind::Weight),
            bias: b.uniform("b", &[cout], cin, ParamKind::Bias),
        }
    }

    pub fn forward<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BatchNormStats,
}

impl BatchNorm {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, channels: usize, momentum: f64) -> Self {
        Self {
            gamma: b.constant("gamma", &[channels], 1.0, ParamKind::Norm),
            beta: b.constant("beta", &[channels], 0.0, ParamKind::Norm),
            stats: BatchNormStats {
                running_mean: b.constant("running_mean", &[channels], 0.0, ParamKind::Buffer),
                running_var: b.constant("running_var", &[channels], 1.0, ParamKind::Buffer),
                momentum,
                eps: 1e-5,
            },
        }
    }

    pub fn forward<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.batch_norm(x, g, b, store, self.stats)
    }
}

/// Convolution, leaky ReLU, batch normalization.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub slope: f64,
}

/// Shared layer settings.
#[derive(Debug, Clone, Copy)]
pub struct UnitStyle {
    pub slope: f64,
    pub momentum: f64,
    pub circular: bool,
}

impl ConvUnit {
    pub fn new<T: Real>(
        b: &mut Builder<'_, T>,
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
        style: UnitStyle,
    ) -> Self {
        Self {
            conv: Conv::new(&mut b.sub("conv"), cin, cout, kernel, dilation, style.circular),
            bn: BatchNorm::new(&mut b.sub("bn"), cout, style.momentum),
            slope: style.slope,
        }
    }

    pub fn forward<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, store, x)?;
        let y = tape.leaky_relu(y, T::lit(self.slope));
        self.bn.forward(tape, store, y)
    }
}

/// Context block: 1×1 projection, then two 3×3 units (the second dilated)
/// added back onto the projection.
#[derive(Debug, Clone)]
pub struct ResContextBlock {
    pub project: Conv,
    pub unit1: ConvUnit,
    pub unit2: ConvUnit,
    pub slope: f64,
}

impl ResContextBlock {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, cin: usize, cout: usize, style: UnitStyle) -> Self {
        Self {
            project: Conv::pointwise(&mut b.sub("project"), cin, cout),
            unit1: ConvUnit::new(&mut b.sub("unit1"), cout, cout, 3, 1, style),
            unit2: ConvUnit::new(&mut b.sub("unit2"), cout, cout, 3, 2, style),
            slope: style.slope,
        }
    }

    pub fn forward<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let sc = self.project.forward(tape, store, x)?;
        let sc = tape.leaky_relu(sc, T::lit(self.slope));
        let a = self.unit1.forward(tape, store, sc)?;
        let a = self.unit2.forward(tape, store, a)?;
        tape.add(sc, a)
    }
}

/// Three stacked units with growing receptive field (3×3, dilated 3×3,
/// dilated 2×2), concatenated and mixed by a 1×1 unit. With a shortcut it
/// is the encoder residual block, without one the decoder block.
#[derive(Debug, Clone)]
pub struct MultiScaleBlock {
    pub shortcut: Option<Conv>,
    pub unit1: ConvUnit,
    pub unit2: ConvUnit,
    pub unit3: ConvUnit,
    pub mix: ConvUnit,
    pub slope: f64,
}

impl MultiScaleBlock {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, cin: usize, cout: usize, residual: bool, style: UnitStyle) -> Self {
        Self {
            shortcut: residual.then(|| Conv::pointwise(&mut b.sub("shortcut"), cin, cout)),
            unit1: ConvUnit::new(&mut b.sub("unit1"), cin, cout, 3, 1, style),
            unit2: ConvUnit::new(&mut b.sub("unit2"), cout, cout, 3, 2, style),
            unit3: ConvUnit::new(&mut b.sub("unit3"), cout, cout, 2, 2, style),
            mix: ConvUnit::new(&mut b.sub("mix"), 3 * cout, cout, 1, 1, style),
            slope: style.slope,
        }
    }

    pub fn forward<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let a1 = self.unit1.forward(tape, store, x)?;
        let a2 = self.unit2.forward(tape, store, a1)?;
        let a3 = self.unit3.forward(tape, store, a2)?;
        let cat = tape.concat(&[a1, a2, a3], 1)?;
        let y = self.mix.forward(tape, store, cat)?;
        match &self.shortcut {
            Some(sc) => {
                let s = sc.forward(tape, store, x)?;
                let s = tape.leaky_relu(s, T::lit(self.slope));
                tape.add(y, s)
            }
            None => Ok(y),
        }
    }
}
