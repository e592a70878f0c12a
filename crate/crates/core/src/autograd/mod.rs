//! Reverse-mode automatic differentiation over a per-pass tape.
//!
//! A [`Graph`] records every operation applied during a forward pass in
//! topological order. [`Graph::backward`] walks the tape once in reverse,
//! accumulating gradients additively, and then releases the saved
//! intermediates. A graph can be differentiated only once.

mod attention;
mod basic;
mod conv;
mod linalg;
mod loss;
mod norm;

pub use conv::Conv2dSpec;
pub use loss::softmax_rows;
pub use norm::BatchStats;

use std::time::Instant;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded operation.
pub(crate) trait Backward {
    fn name(&self) -> &'static str;

    /// Accumulates the input gradients given the output gradient `grad`.
    fn backward(&self, cx: &mut BackwardCx<'_>, out: &Tensor, grad: &[f64]) -> Result<()>;
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    leaf: bool,
    op: Option<Box<dyn Backward>>,
}

pub(crate) struct BackwardCx<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl<'a> BackwardCx<'a> {
    pub fn value(&self, v: Var) -> &'a Tensor {
        &self.nodes[v.0].value
    }

    pub fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient buffer of `v`, zero-initialised on first use.
    pub fn grad_mut(&mut self, v: Var) -> &mut [f64] {
        let len = self.nodes[v.0].value.numel();
        self.grads[v.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn accumulate(&mut self, v: Var, g: &[f64]) {
        if self.wants(v) {
            for (a, b) in self.grad_mut(v).iter_mut().zip(g) {
                *a += b;
            }
        }
    }
}

/// Accumulated wall time of one operation kind.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OpTiming {
    pub name: &'static str,
    pub calls: usize,
    pub forward_secs: f64,
    pub backward_secs: f64,
}

#[derive(Default)]
struct Profiler {
    mark: Option<Instant>,
    ops: Vec<OpTiming>,
}

impl Profiler {
    fn entry(&mut self, name: &'static str) -> &mut OpTiming {
        match self.ops.iter().position(|o| o.name == name) {
            Some(i) => &mut self.ops[i],
            None => {
                self.ops.push(OpTiming { name, ..OpTiming::default() });
                self.ops.last_mut().expect("pushed")
            }
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
    profiler: Option<Profiler>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that records per-operation timings. Forward time of an op is
    /// the time since the previous recorded node.
    pub fn with_profiling() -> Self {
        Graph { profiler: Some(Profiler { mark: Some(Instant::now()), ops: Vec::new() }), ..Self::default() }
    }

    /// Timings gathered so far, slowest first.
    pub fn timings(&self) -> Vec<OpTiming> {
        let mut ops = self.profiler.as_ref().map(|p| p.ops.clone()).unwrap_or_default();
        ops.sort_by(|a, b| (b.forward_secs + b.backward_secs).total_cmp(&(a.forward_secs + a.backward_secs)));
        ops
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        value.ensure_finite("leaf")?;
        Ok(self.insert(value, requires_grad, true, None))
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn insert(&mut self, value: Tensor, requires_grad: bool, leaf: bool, op: Option<Box<dyn Backward>>) -> Var {
        if let Some(p) = &mut self.profiler {
            if leaf {
                let dt = p.mark.map_or(0.0, |m| m.elapsed().as_secs_f64());
                let e = p.entry("leaf");
                e.calls += 1;
                e.forward_secs += dt;
            }
            p.mark = Some(Instant::now());
        }
        self.nodes.push(Node {
            value,
            requires_grad,
            leaf,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the result of an operation over `inputs`.
    pub(crate) fn push(&mut self, value: Tensor, inputs: &[Var], op: impl Backward + 'static) -> Result<Var> {
        if self.consumed {
            return Err(Error::Graph("graph already consumed by backward".into()));
        }
        value.ensure_finite(op.name())?;
        if let Some(p) = &mut self.profiler {
            let dt = p.mark.map_or(0.0, |m| m.elapsed().as_secs_f64());
            let e = p.entry(op.name());
            e.calls += 1;
            e.forward_secs += dt;
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op: Option<Box<dyn Backward>> = if requires_grad { Some(Box::new(op)) } else { None };
        Ok(self.insert(value, requires_grad, false, op))
    }

    /// Records a value that is never differentiated (e.g. attention maps).
    pub(crate) fn push_aux(&mut self, value: Tensor) -> Var {
        // bypasses `insert` so the profiler charges this time to the caller's op
        self.nodes.push(Node { value, requires_grad: false, leaf: false, op: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if any
    /// flowed into it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_slice(g, self.nodes[v.0].value.shape()).expect("grad shape"))
    }

    /// Differentiates the scalar `loss` with respect to every leaf that
    /// requires gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Graph("graph already consumed by backward".into()));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(op) = self.nodes[i].op.take() else {
                continue;
            };
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let (head, _) = self.nodes.split_at(i + 1);
            let mut cx = BackwardCx {
                nodes: head,
                grads: &mut grads,
            };
            let start = self.profiler.as_ref().map(|_| Instant::now());
            op.backward(&mut cx, &head[i].value, &grad)?;
            if let (Some(p), Some(t)) = (&mut self.profiler, start) {
                p.entry(op.name()).backward_secs += t.elapsed().as_secs_f64();
            }
            if !grad.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", op.name())));
            }
        }
        // Only leaf gradients are retained; saved intermediates were dropped
        // together with the ops above.
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].leaf {
                *g = None;
            } else if let Some(g) = g {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("leaf gradient".into()));
                }
            }
        }
        for node in &mut self.nodes {
            node.op = None;
        }
        self.grads = grads;
        Ok(())
    }
}
