//! Recording of forward computations and reverse-mode gradient propagation.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::param::{ParamId, ParamStore};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &mut Grads<T>)>;

#[derive(Clone, Copy)]
enum Source {
    Constant,
    Leaf,
    Param(ParamId),
    Op,
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    source: Source,
    backward: Option<BackwardFn<T>>,
}

/// Gradient accumulator handed to backward rules.
pub struct Grads<T> {
    slots: Vec<Option<Tensor<T>>>,
    requires: Vec<bool>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Grads<T> {
    #[inline]
    pub fn wants(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Adds `g` into the gradient of `v` (no-op when `v` needs none).
    pub fn add(&mut self, v: Var, g: Tensor<T>) {
        if !self.requires[v.0] {
            return;
        }
        match &mut self.slots[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Mutable gradient buffer of `v`, zero-initialized on first use.
    pub fn buffer(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.requires[v.0] {
            return None;
        }
        let shape = &self.shapes[v.0];
        Some(self.slots[v.0].get_or_insert_with(|| Tensor::zeros(shape)).data_mut())
    }
}

/// Gradients of leaf values after [`Tape::backward`].
pub struct Gradients<T> {
    leaves: HashMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }
}

/// Append-only record of a forward pass.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    param_vars: RefCell<HashMap<ParamId, Var>>,
    buffer_updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
    mode: Mode,
    rng: RefCell<ChaCha8Rng>,
    backward_done: Cell<bool>,
}

impl<T: Real> Tape<T> {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            param_vars: RefCell::new(HashMap::new()),
            buffer_updates: RefCell::new(Vec::new()),
            mode,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            backward_done: Cell::new(false),
        }
    }

    pub fn eval() -> Self {
        Self::new(Mode::Eval, 0)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn with_rng<R>(&self, f: impl FnOnce(&mut ChaCha8Rng) -> R) -> R {
        f(&mut self.rng.borrow_mut())
    }

    fn push(&self, value: Tensor<T>, requires_grad: bool, source: Source, backward: Option<BackwardFn<T>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            source,
            backward,
        });
        Var(nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, false, Source::Constant, None)
    }

    /// Input whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push(value, true, Source::Leaf, None)
    }

    /// Records parameter `id` (once per tape).
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.borrow().get(&id) {
            return *v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), p.trainable, Source::Param(id), None);
        self.param_vars.borrow_mut().insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Records an operation. `backward` receives the output gradient and
    /// must add the gradients of `inputs`; it is dropped when no input
    /// needs a gradient.
    pub fn push_op(
        &self,
        value: Tensor<T>,
        inputs: &[Var],
        backward: impl Fn(&Tensor<T>, &mut Grads<T>) + 'static,
    ) -> Var {
        let requires = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.0].requires_grad)
        };
        let bw: Option<BackwardFn<T>> = if requires { Some(Box::new(backward)) } else { None };
        self.push(value, requires, Source::Op, bw)
    }

    pub(crate) fn record_buffer_update(&self, id: ParamId, value: Tensor<T>) {
        if self.is_training() {
            self.buffer_updates.borrow_mut().push((id, value));
        }
    }

    /// Running-statistics updates produced by normalization layers in
    /// training mode, to be applied with [`ParamStore::apply_buffer_updates`].
    pub fn take_buffer_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates.borrow_mut())
    }

    /// Propagates `d loss / d ·` back through the tape. Gradients of
    /// trainable parameters are accumulated into `store`; gradients of
    /// [`Tape::leaf`] inputs are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let out = &nodes[loss.0];
        if out.value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                out.value.shape()
            )));
        }
        self.backward_done.set(true);
        let n = loss.0 + 1;
        let mut grads = Grads {
            slots: (0..n).map(|_| None).collect(),
            requires: nodes[..n].iter().map(|nd| nd.requires_grad).collect(),
            shapes: nodes[..n].iter().map(|nd| nd.value.shape().to_vec()).collect(),
        };
        if !out.requires_grad {
            return Ok(Gradients { leaves: HashMap::new() });
        }
        grads.slots[loss.0] = Some(Tensor::full(out.value.shape(), T::one()));
        let mut leaves = HashMap::new();
        for i in (0..n).rev() {
            let Some(g) = grads.slots[i].take() else { continue };
            let node = &nodes[i];
            match node.source {
                Source::Op => {
                    if let Some(bw) = &node.backward {
                        bw(&g, &mut grads);
                    }
                }
                Source::Param(id) => {
                    let p = store.get_mut(id);
                    if p.trainable {
                        p.grad.add_assign(&g);
                    }
                }
                Source::Leaf => {
                    leaves.insert(Var(i), g);
                }
                Source::Constant => {}
            }
        }
        Ok(Gradients { leaves })
    }
}
