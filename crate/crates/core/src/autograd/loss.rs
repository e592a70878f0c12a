use super::{Backward, BackwardCx, Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::softmax_row;
use crate::tensor::Tensor;

struct SoftmaxOp {
    x: Var,
    axis_len: usize,
    inner: usize,
}

impl Backward for SoftmaxOp {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, cx: &mut BackwardCx<'_>, out: &Tensor, grad: &[f64]) -> Result<()> {
        if !cx.wants(self.x) {
            return Ok(());
        }
        let (n, inner) = (self.axis_len, self.inner);
        let y = out.data();
        let gx = cx.grad_mut(self.x);
        for block in 0..y.len() / (n * inner) {
            for j in 0..inner {
                let idx = |k: usize| (block * n + k) * inner + j;
                let dot: f64 = (0..n).map(|k| grad[idx(k)] * y[idx(k)]).sum();
                for k in 0..n {
                    gx[idx(k)] += y[idx(k)] * (grad[idx(k)] - dot);
                }
            }
        }
        Ok(())
    }
}

struct CrossEntropyOp {
    logits: Var,
    probs: Vec<f64>,
    labels: Vec<usize>,
}

impl Backward for CrossEntropyOp {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(&self, cx: &mut BackwardCx<'_>, _: &Tensor, grad: &[f64]) -> Result<()> {
        if cx.wants(self.logits) {
            let batch = self.labels.len();
            let classes = self.probs.len() / batch;
            let scale = grad[0] / batch as f64;
            let gx = cx.grad_mut(self.logits);
            for (b, &label) in self.labels.iter().enumerate() {
                for c in 0..classes {
                    let onehot = if c == label { 1.0 } else { 0.0 };
                    gx[b * classes + c] += scale * (self.probs[b * classes + c] - onehot);
                }
            }
        }
        Ok(())
    }
}

/// Row-wise softmax of a `(B, C)` logit matrix.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 2 || s[1] == 0 {
        return Err(Error::shape("softmax", format!("logits {s:?}")));
    }
    let mut data = logits.data().to_vec();
    for row in data.chunks_exact_mut(s[1]) {
        softmax_row(row);
    }
    Tensor::from_vec(data, s)
}

impl Graph {
    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::shape("softmax", format!("axis {axis} of {shape:?}")));
        }
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        let mut row = vec![0.0; n];
        for block in 0..xd.len() / (n * inner) {
            for j in 0..inner {
                for (k, r) in row.iter_mut().enumerate() {
                    *r = xd[(block * n + k) * inner + j];
                }
                softmax_row(&mut row);
                for (k, r) in row.iter().enumerate() {
                    out[(block * n + k) * inner + j] = *r;
                }
            }
        }
        let value = Tensor::from_vec(out, &shape)?;
        self.push(value, &[x], SoftmaxOp { x, axis_len: n, inner })
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(Error::shape("cross_entropy", format!("logits {s:?} for {} labels", labels.len())));
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        let xd = self.value(logits).data();
        let mut probs = Vec::with_capacity(xd.len());
        let mut loss = 0.0;
        for (row, &label) in xd.chunks_exact(classes).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum_exp.ln();
            loss += log_z - row[label];
            probs.extend(row.iter().map(|v| (v - log_z).exp()));
        }
        loss /= labels.len() as f64;
        let op = CrossEntropyOp { logits, probs, labels: labels.to_vec() };
        self.push(Tensor::scalar(loss), &[logits], op)
    }
}
