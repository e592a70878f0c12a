//! Elementwise, shape and reduction operations.

use super::{Backward, BackwardCx, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

struct AddOp(Var, Var);
impl Backward for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, cx: &mut BackwardCx<'_>, _: &Tensor, grad: &[f64]) -> Result<()> {
        cx.accumulate(self.0, grad);
        cx.accumulate(self.1, grad);
        Ok(())
    }
}

struct SubOp(Var, Var);
impl Backward for SubOp {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, cx: &mut BackwardCx<'_>, _: &Tensor, grad: &[f64]) -> Result<()> {
        cx.accumulate(self.0, grad);
        if cx.wants(self.1) {
            for (a, g) in cx.grad_mut(self.1).iter_mut().zip(grad) {
                *a -= g;
            }
        }
        Ok(())
    }
}

struct MulOp(Var, Var);
impl Backward for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, cx: &mut BackwardCx<'_>, _: &Tensor, grad: &[f64]) -> Result<()> {
        let (a, b) = (self.0, self.1);
        if cx.wants(a) {
            let bv = cx.value(b).data();
            for ((ga, g), bv) in cx.grad_mut(a).iter_mut().zip(grad).zip(bv) {
                *ga += g * bv;
            }
        }
        if cx.wants(b) {
            let av = cx.value(a).data();
            for ((gb, g), av) in cx.grad_mut(b).iter_mut().zip(grad).zip(av) {
                *gb += g * av;
            }
        }
        Ok(())
    }
}

struct ScaleOp(Var, f64);
impl Backward for ScaleOp {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, cx: &mut BackwardCx<'_>, _: &Tensor, grad: &[f64]) -> Result<()> {
        if cx.wants(self.0) {
            for (a, g) in cx.grad_mut(self.0).iter_mut().zip(grad) {
                *a += self.1 * g;
            }
        }
        Ok(())
    }
}

/// Identity on the flat buffer: reshape and scalar shifts.
struct PassOp(Var, &'static str);
impl Backward for PassOp {
    fn name(&self) -> &'static str {
        self.1
    }
    fn backward(&self, cx: &mut BackwardCx<'_>, _: &Tensor, grad: &[f64]) -> Result<()> {
        cx.accumulate(self.0, grad);
        Ok(())
    }
}

struct PermuteOp {
    input: Var,
    perm: Vec<usize>,
}
impl Backward for PermuteOp {
    fn name(&self) -> &'static str {
        "permute"
    }
    fn backward(&self, cx: &mut BackwardCx<'_>, out: &Tensor, grad: &[f64]) -> Result<()> {
        if !cx.wants(self.input) {
            return Ok(());
        }
        let mut inverse = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inverse[p] = i;
        }
        let back = permute_data(grad, out.shape(), &inverse);
        cx.accumulate(self.input, &back);
        Ok(())
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output element `o` with multi-index `j` reads input index `i` where
/// `i[perm[k]] = j[k]`.
fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = perm.len();
    if rank == 0 {
        return data.to_vec();
    }
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() {
        return out;
    }
    let mut idx = vec![0usize; rank];
    let last = rank - 1;
    loop {
        let base: usize = (0..last).map(|k| idx[k] * src_strides[k]).sum();
        let step = src_strides[last];
        out.extend((0..out_shape[last]).map(|j| data[base + j * step]));
        // advance all but the last axis
        let mut k = last;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < out_shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

struct ConcatOp {
    inputs: Vec<Var>,
    axis: usize,
}
impl Backward for ConcatOp {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn backward(&self, cx: &mut BackwardCx<'_>, out: &Tensor, grad: &[f64]) -> Result<()> {
        let shape = out.shape();
        let outer: usize = shape[..self.axis].iter().product();
        let inner: usize = shape[self.axis + 1..].iter().product();
        let total = shape[self.axis];
        let mut offset = 0;
        for &v in &self.inputs {
            let extent = cx.value(v).shape()[self.axis];
            if cx.wants(v) {
                let gv = cx.grad_mut(v);
                for o in 0..outer {
                    let src = &grad[(o * total + offset) * inner..(o * total + offset + extent) * inner];
                    let dst = &mut gv[o * extent * inner..(o + 1) * extent * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            offset += extent;
        }
        Ok(())
    }
}

struct SliceOp {
    input: Var,
    axis: usize,
    start: usize,
}
impl Backward for SliceOp {
    fn name(&self) -> &'static str {
        "slice"
    }
    fn backward(&self, cx: &mut BackwardCx<'_>, out: &Tensor, grad: &[f64]) -> Result<()> {
        if !cx.wants(self.input) {
            return Ok(());
        }
        let in_shape = cx.value(self.input).shape();
        let outer: usize = in_shape[..self.axis].iter().product();
        let inner: usize = in_shape[self.axis + 1..].iter().product();
        let total = in_shape[self.axis];
        let len = out.shape()[self.axis];
        let gv = cx.grad_mut(self.input);
        for o in 0..outer {
            let dst = &mut gv[(o * total + self.start) * inner..(o * total + self.start + len) * inner];
            let src = &grad[o * len * inner..(o + 1) * len * inner];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(())
    }
}

struct SumOp(Var, f64);
impl Backward for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, cx: &mut BackwardCx<'_>, _: &Tensor, grad: &[f64]) -> Result<()> {
        if cx.wants(self.0) {
            let g = grad[0] * self.1;
            for a in cx.grad_mut(self.0) {
                *a += g;
            }
        }
        Ok(())
    }
}

struct AddBiasOp {
    input: Var,
    bias: Var,
    axis: usize,
}
impl Backward for AddBiasOp {
    fn name(&self) -> &'static str {
        "add_bias"
    }
    fn backward(&self, cx: &mut BackwardCx<'_>, out: &Tensor, grad: &[f64]) -> Result<()> {
        cx.accumulate(self.input, grad);
        if cx.wants(self.bias) {
            let shape = out.shape();
            let outer: usize = shape[..self.axis].iter().product();
            let n = shape[self.axis];
            let inner: usize = shape[self.axis + 1..].iter().product();
            let gb = cx.grad_mut(self.bias);
            for o in 0..outer {
                for (c, gb) in gb.iter_mut().enumerate() {
                    let base = (o * n + c) * inner;
                    *gb += grad[base..base + inner].iter().sum::<f64>();
                }
            }
        }
        Ok(())
    }
}

struct ReluOp(Var);
impl Backward for ReluOp {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn backward(&self, cx: &mut BackwardCx<'_>, out: &Tensor, grad: &[f64]) -> Result<()> {
        if cx.wants(self.0) {
            for ((a, g), y) in cx.grad_mut(self.0).iter_mut().zip(grad).zip(out.data()) {
                if *y > 0.0 {
                    *a += g;
                }
            }
        }
        Ok(())
    }
}

impl Graph {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_values(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(data, ta.shape()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_values(a, b, |x, y| x + y);
        self.push(v, &[a, b], AddOp(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_values(a, b, |x, y| x - y);
        self.push(v, &[a, b], SubOp(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_values(a, b, |x, y| x * y);
        self.push(v, &[a, b], MulOp(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push(v, &[a], ScaleOp(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + s);
        self.push(v, &[a], PassOp(a, "add_scalar"))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        self.push(v, &[a], PassOp(a, "reshape"))
    }

    /// Reorders axes: output axis `k` is input axis `perm[k]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("invalid permutation {perm:?} for {shape:?}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let data = permute_data(self.value(a).data(), &shape, perm);
        let v = Tensor::from_vec(data, &out_shape)?;
        self.push(v, &[a], PermuteOp { input: a, perm: perm.to_vec() })
    }

    /// Matrix transpose of a rank-2 value.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(Error::shape("transpose", format!("rank {} input", self.shape(a).len())));
        }
        self.permute(a, &[1, 0])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for rank {}", base.len())));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in inputs {
                let e = self.shape(v)[axis];
                data.extend_from_slice(&self.value(v).data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let value = Tensor::from_vec(data, &shape)?;
        self.push(value, inputs, ConcatOp { inputs: inputs.to_vec(), axis })
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape("slice", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let total = shape[axis];
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * total + start) * inner..(o * total + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::from_vec(data, &out_shape)?;
        self.push(value, &[a], SliceOp { input: a, axis, start })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), &[a], SumOp(a, 1.0))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::shape("mean", "empty input"));
        }
        let s: f64 = self.value(a).data().iter().sum::<f64>() / n as f64;
        self.push(Tensor::scalar(s), &[a], SumOp(a, 1.0 / n as f64))
    }

    /// Adds a rank-1 `bias` broadcast along `axis` (channels for images,
    /// the feature axis for token matrices).
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || self.shape(bias) != [shape[axis]] {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} on axis {axis} of {shape:?}", self.shape(bias)),
            ));
        }
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += b[(i / inner) % n];
        }
        self.push(out, &[x, bias], AddBiasOp { input: x, bias, axis })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, &[a], ReluOp(a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_slice(data, shape).unwrap()
    }

    #[test]
    fn permute_matches_index_formula() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = g.constant(t(&data, &[2, 3, 4])).unwrap();
        let y = g.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(g.shape(y), &[4, 2, 3]);
        let out = g.value(y).data();
        for a in 0..4 {
            for b in 0..2 {
                for c in 0..3 {
                    assert_eq!(out[(a * 2 + b) * 3 + c], data[(b * 3 + c) * 4 + a]);
                }
            }
        }
    }

    #[test]
    fn concat_then_slice_is_identity() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1., 2., 3., 4.], &[1, 2, 2])).unwrap();
        let b = g.constant(t(&[5., 6., 7., 8., 9., 10.], &[1, 3, 2])).unwrap();
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[1, 5, 2]);
        let a2 = g.slice(c, 1, 0, 2).unwrap();
        let b2 = g.slice(c, 1, 2, 3).unwrap();
        assert_eq!(g.value(a2), g.value(a));
        assert_eq!(g.value(b2), g.value(b));
    }

    #[test]
    fn relu_clamps() {
        let mut g = Graph::new();
        let x = g.constant(t(&[-1., 2.], &[2])).unwrap();
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0., 2.]);
    }

    #[test]
    fn bias_broadcasts_over_channels() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3, 1, 2])).unwrap();
        let b = g.constant(t(&[1., 2., 3.], &[3])).unwrap();
        let y = g.add_bias(x, b, 1).unwrap();
        assert_eq!(&g.value(y).data()[..6], &[1., 1., 2., 2., 3., 3.]);
        assert!(g.add_bias(x, b, 3).is_err());
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2])).unwrap();
        let b = g.constant(Tensor::zeros(&[3])).unwrap();
        assert!(g.add(a, b).is_err());
        assert!(g.permute(a, &[1]).is_err());
        assert!(g.slice(a, 0, 1, 2).is_err());
    }
}
