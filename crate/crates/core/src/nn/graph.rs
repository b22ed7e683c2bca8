use alloc::vec;
use alloc::vec::Vec;

use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{bail_shape, Result};
use crate::rng::{self, Rng};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) enum Op<S> {
    Leaf,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    Bmm { a: Var, b: Var, trans_b: bool },
    Conv2d { x: Var, w: Var, b: Option<Var>, k: usize, cols: Vec<S> },
    AvgPool2 { x: Var },
    GlobalAvgPool { x: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, inv_std: Vec<S> },
    BatchNormEval { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, inv_std: Vec<S> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, inv_std: Vec<S> },
    Relu { x: Var },
    Gelu { x: Var },
    Sigmoid { x: Var },
    Softmax { x: Var },
    Dropout { x: Var, mask: Vec<S> },
    Add { a: Var, b: Var },
    AddBroadcast { x: Var, p: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: S },
    OneMinus { x: Var },
    Reshape { x: Var },
    SwapAxes12 { x: Var, dims: [usize; 4] },
    Concat { a: Var, b: Var },
    ScaleChannels { x: Var, a: Var },
    SoftCrossEntropy { logits: Var, targets: Vec<S>, probs: Vec<S> },
    Sum { x: Var },
    Mean { x: Var },
}

pub(crate) struct Node<S> {
    pub value: Tensor<S>,
    pub op: Op<S>,
    pub needs_grad: bool,
}

/// Tape for one forward pass.
pub struct Graph<S> {
    pub(crate) nodes: Vec<Node<S>>,
    pub(crate) leaf_grads: Vec<Option<Vec<S>>>,
    param_vars: Vec<(ParamId, Var)>,
    training: bool,
    pub(crate) rng: Rng,
    /// Weight of the batch statistic in running-average updates.
    pub bn_momentum: f64,
}

impl<S: Scalar> Graph<S> {
    /// `training` selects batch statistics and active dropout; `seed` drives dropout masks.
    pub fn new(training: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            param_vars: Vec::new(),
            training,
            rng: rng::seeded(seed),
            bn_momentum: 0.1,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_with(value, op, needs_grad)
    }

    pub(crate) fn push_with(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push_with(value, Op::Leaf, false)
    }

    /// Input whose gradient is kept and readable through [`Graph::grad`].
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.push_with(value, Op::Leaf, true)
    }

    /// Brings a stored parameter onto the tape (once per graph).
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.param_vars.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let entry = store.get(id);
        let v = self.push_with(entry.value.clone(), Op::Param(id), entry.trainable);
        self.param_vars.push((id, v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Gradient of an [`Graph::input`] leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Back-propagates from a scalar loss, adding parameter gradients into `store`.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<S>) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            bail_shape!("backward needs a scalar, got shape {:?}", self.nodes[loss.0].value.shape);
        }
        self.backward_with(loss, vec![S::one()], store)
    }

    /// Back-propagates an arbitrary upstream gradient `seed` for `out`.
    pub fn backward_with(&mut self, out: Var, seed: Vec<S>, store: &mut ParamStore<S>) -> Result<()> {
        if seed.len() != self.nodes[out.0].value.len() {
            bail_shape!("seed length {} != output length {}", seed.len(), self.nodes[out.0].value.len());
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf => add_into(&mut self.leaf_grads[i], &g),
                Op::Param(id) => {
                    let dst = store.grad_mut(*id);
                    dst.iter_mut().zip(&g).for_each(|(d, s)| *d += *s);
                }
                _ => super::backward::propagate(&self.nodes, i, &g, &mut grads)?,
            }
        }
        Ok(())
    }
}

fn add_into<S: Scalar>(slot: &mut Option<Vec<S>>, g: &[S]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
        None => *slot = Some(g.to_vec()),
    }
}

/// Adds `g` into the pending gradient of `v` (allocating on first use).
pub(crate) fn accumulate<S: Scalar>(grads: &mut [Option<Vec<S>>], v: Var, g: Vec<S>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
        slot @ None => *slot = Some(g),
    }
}
