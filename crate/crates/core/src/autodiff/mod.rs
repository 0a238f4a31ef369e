//! Tape-based reverse-mode differentiation over the small set of array
//! operations the pipeline uses.
//!
//! A [`Graph`] records every operation in execution order, which is already a
//! topological order, so [`Graph::backward`] is a single reverse sweep that
//! visits each node once. Intermediate gradients live only for the duration of
//! one sweep; leaf gradients persist and accumulate across sweeps until
//! [`Graph::zero_grad`].
//!
//! A graph belongs to one worker. Parallel batch evaluation builds one graph
//! per sample against a shared, read-only [`ParamStore`].

mod backward;
pub mod gradcheck;
mod ops;
mod params;
mod sample;

use std::collections::HashMap;
use std::sync::Arc;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamReport};
pub use params::{Gradients, ParamId, ParamStore};
pub use sample::SampleMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Value(usize);

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul {
        a: Value,
        b: Value,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_b: bool,
        trans_b: bool,
    },
    Add(Value, Value),
    Sub(Value, Value),
    Mul(Value, Value),
    Div(Value, Value),
    Affine {
        x: Value,
        scale: f64,
    },
    AddBcast(Value, Value),
    MulBcast(Value, Value),
    Softmax {
        x: Value,
        axis: usize,
    },
    LayerNorm {
        x: Value,
        axis: usize,
    },
    Relu(Value),
    Sigmoid(Value),
    Ln(Value),
    Clamp {
        x: Value,
        lo: f64,
        hi: f64,
    },
    Concat {
        parts: Vec<Value>,
        axis: usize,
    },
    Reshape(Value),
    Permute {
        x: Value,
        axes: Vec<usize>,
    },
    Slice {
        x: Value,
        axis: usize,
        start: usize,
    },
    Sum {
        x: Value,
        axis: usize,
    },
    Mean {
        x: Value,
        axis: usize,
    },
    SumAll(Value),
    MeanAll(Value),
    Conv1x1 {
        x: Value,
        w: Value,
        b: Option<Value>,
    },
    Conv2d {
        x: Value,
        w: Value,
        b: Option<Value>,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Upsample {
        x: Value,
        factor: usize,
    },
    Sample {
        grid: Value,
        map: Arc<SampleMap>,
    },
    Embedding {
        table: Value,
        indices: Vec<usize>,
    },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) grad: Option<Vec<T>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
    /// Op-specific forward cache (layer-norm inverse deviations, im2col columns).
    pub(crate) aux: Vec<T>,
}

/// Computation graph for one sample.
pub struct Graph<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, Value>,
    inference: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            inference: false,
        }
    }

    /// Graph whose parameters bind as constants: a forward pass records no
    /// gradient bookkeeping anywhere.
    pub fn inference() -> Self {
        Self {
            inference: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool, aux: Vec<T>) -> Value {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
            aux,
        });
        Value(self.nodes.len() - 1)
    }

    /// Leaf that receives gradients.
    pub fn variable(&mut self, t: Tensor<T>) -> Value {
        self.push(t, Op::Leaf, true, Vec::new())
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> Value {
        self.push(t, Op::Leaf, false, Vec::new())
    }

    /// Copy of `v` cut off from the graph: no gradient flows back through it.
    pub fn detach(&mut self, v: Value) -> Value {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node,
    /// so every use of a shared weight accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Value {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let t = store.get(id).clone();
        let v = if self.inference {
            self.constant(t)
        } else {
            self.variable(t)
        };
        self.bound.insert(id, v);
        v
    }

    /// Make later [`Graph::param`] calls for `id` return `v` instead of the
    /// stored tensor. Used to drive a model from externally owned leaves.
    pub fn bind_param(&mut self, id: ParamId, v: Value) {
        self.bound.insert(id, v);
    }

    /// The parameter's current value as a constant, for paths whose gradient
    /// contribution should be cut.
    pub fn frozen_param(&mut self, store: &ParamStore<T>, id: ParamId) -> Value {
        self.constant(store.get(id).clone())
    }

    pub fn data(&self, v: Value) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Value) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Value) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Value) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Gradients of every parameter bound into this graph.
    pub fn param_grads(&self, store: &ParamStore<T>) -> Gradients<T> {
        let mut out = Gradients::empty(store.len());
        for (&id, &v) in &self.bound {
            if let Some(g) = self.grad(v) {
                out.set(id, g);
            }
        }
        out
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&mut self, out: Value) -> Result<()> {
        let numel = self.nodes[out.0].value.numel();
        if numel != 1 {
            return Err(Error::shape("backward", self.shape(out), &[1]));
        }
        if !self.nodes[out.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![T::one()]);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match node.grad.as_mut() {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a = *a + *b;
                        }
                    }
                    None => node.grad = Some(g),
                }
                continue;
            }
            backward::propagate(self, i, &g, &mut grads);
        }
        Ok(())
    }

    pub(crate) fn rg(&self, v: Value) -> bool {
        self.nodes[v.0].requires_grad
    }
}
