//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as a node holding its output value and
//! the inputs (plus whatever activations its backward rule needs). Nodes are
//! appended in evaluation order, so the node list is already a topological
//! order and [`Tape::backward`] is a single reverse sweep. Gradients reaching
//! the same node from several consumers are summed in that reverse order,
//! which makes repeated runs bit-identical.
//!
//! Values are addressed through [`Var`] handles, which are plain indices into
//! the tape that produced them.

mod conv;
mod elementwise;
mod linalg;
mod nn;
mod shuffle;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use conv::Conv2dArgs;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Abs(Var),
    Square(Var),
    Relu(Var),
    Sigmoid(Var),
    SumAll(Var),
    SumAxis(Var, usize),
    Matmul { a: Var, b: Var, trans_b: bool },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow { x: Var, axis: usize, start: usize },
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    GlobalAvgPool(Var),
    Median {
        x: Var,
        /// Source flat indices per output element; equal when the count is odd.
        picks: Vec<(usize, usize)>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        args: Conv2dArgs,
    },
    PixelShuffle(Var, usize),
    PixelUnshuffle(Var, usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of a computation, owning every intermediate value.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grad(v)?.to_vec();
        Tensor::new(self.shape(v).to_vec(), g).ok()
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an op output; it requires grad iff any input does.
    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        self.push_node(value, op, rg)
    }

    pub(crate) fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Populates the gradient of every leaf that requires grad.
    ///
    /// Previous gradients are discarded. Intermediate gradients are released
    /// as soon as they have been propagated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = &self.nodes[loss.0];
        if node.value.numel() != 1 {
            return Err(Error::NonScalarLoss(node.value.shape().to_vec()));
        }
        if !node.requires_grad {
            return Err(Error::Detached);
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.requires_grad && matches!(n.op, Op::Leaf) {
                self.grads[i] = Some(vec![T::ZERO; n.value.numel()]);
            }
        }
        self.grads[loss.0] = Some(vec![T::ONE]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backward_node(i, &g);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &[T]) {
        let nodes: &[Node<T>] = &self.nodes;
        let node = &nodes[i];
        let mut sink = GradSink {
            nodes,
            grads: &mut self.grads,
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => elementwise::add_backward(&mut sink, *a, *b, &node.value, g, T::ONE),
            Op::Sub(a, b) => {
                elementwise::add_backward(&mut sink, *a, *b, &node.value, g, -T::ONE)
            }
            Op::Mul(a, b) => elementwise::mul_backward(&mut sink, *a, *b, &node.value, g),
            Op::Scale(a, k) => sink.accumulate(*a, |dst| {
                for (d, &gv) in dst.iter_mut().zip(g) {
                    *d += gv * *k;
                }
            }),
            Op::Abs(a) => {
                let x = sink.value(*a).data();
                let contrib: Vec<T> = x
                    .iter()
                    .zip(g)
                    .map(|(&xv, &gv)| {
                        if xv > T::ZERO {
                            gv
                        } else if xv < T::ZERO {
                            -gv
                        } else {
                            T::ZERO
                        }
                    })
                    .collect();
                sink.add_to(*a, &contrib);
            }
            Op::Square(a) => {
                let two = T::from_f64(2.0);
                let contrib: Vec<T> = sink
                    .value(*a)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&xv, &gv)| two * xv * gv)
                    .collect();
                sink.add_to(*a, &contrib);
            }
            Op::Relu(a) => {
                let contrib: Vec<T> = sink
                    .value(*a)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&xv, &gv)| if xv > T::ZERO { gv } else { T::ZERO })
                    .collect();
                sink.add_to(*a, &contrib);
            }
            Op::Sigmoid(a) => {
                let contrib: Vec<T> = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| gv * y * (T::ONE - y))
                    .collect();
                sink.add_to(*a, &contrib);
            }
            Op::SumAll(a) => sink.accumulate(*a, |dst| {
                for d in dst.iter_mut() {
                    *d += g[0];
                }
            }),
            Op::SumAxis(a, axis) => elementwise::sum_axis_backward(&mut sink, *a, *axis, g),
            Op::Matmul { a, b, trans_b } => {
                linalg::matmul_backward(&mut sink, *a, *b, *trans_b, g)
            }
            Op::Reshape(a) => sink.add_to(*a, g),
            Op::Permute(a, perm) => linalg::permute_backward(&mut sink, *a, perm, g),
            Op::Concat(inputs, axis) => linalg::concat_backward(&mut sink, inputs, *axis, g),
            Op::Narrow { x, axis, start } => {
                linalg::narrow_backward(&mut sink, *x, *axis, *start, &node.value, g)
            }
            Op::Softmax(a, axis) => nn::softmax_backward(&mut sink, *a, *axis, &node.value, g),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => nn::layer_norm_backward(&mut sink, *x, *gamma, *beta, mean, rstd, g),
            Op::GlobalAvgPool(a) => nn::global_avg_pool_backward(&mut sink, *a, g),
            Op::Median { x, picks, .. } => nn::median_backward(&mut sink, *x, picks, g),
            Op::Conv2d { x, w, b, args } => conv::conv2d_backward(&mut sink, *x, *w, *b, *args, g),
            Op::PixelShuffle(a, r) => shuffle::shuffle_backward(&mut sink, *a, *r, g, true),
            Op::PixelUnshuffle(a, r) => shuffle::shuffle_backward(&mut sink, *a, *r, g, false),
        }
    }
}

/// Mutable view used by backward rules: read values, accumulate gradients.
pub(crate) struct GradSink<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<'a, T: Scalar> GradSink<'a, T> {
    /// Borrow tied to the tape, not to the sink, so it can be held while accumulating.
    pub(crate) fn value(&self, v: Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Runs `f` on the gradient buffer of `v` (allocated on first use).
    pub(crate) fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let buf = self.grads[v.0].get_or_insert_with(|| vec![T::ZERO; n]);
        f(buf);
    }

    pub(crate) fn add_to(&mut self, v: Var, contrib: &[T]) {
        self.accumulate(v, |dst| {
            for (d, &c) in dst.iter_mut().zip(contrib) {
                *d += c;
            }
        });
    }
}

pub(crate) fn check_same_rank(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(
            op,
            alloc::format!("rank mismatch {:?} vs {:?}", a, b),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
