//! Fused multi-head scaled dot-product attention.
//!
//! Keys and values are visited in a canonical order (sorted by the bit
//! content of each key/value token) when reducing over the key axis, so the
//! forward result is bit-identical under any joint permutation of keys and
//! values, and row-permutation equivariant over queries.

use std::cmp::Ordering;

use super::{Backward, BackwardCx, Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::{gemm, lane_dot, softmax_row, Mat};
use crate::tensor::Tensor;

struct AttentionOp {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    probs: Var,
}

fn compare_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Canonical visiting order of the `s` key/value tokens of one batch item.
fn canonical_order(k: &[f64], v: &[f64], s: usize, d: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&i, &j| {
        compare_rows(&k[i * d..(i + 1) * d], &k[j * d..(j + 1) * d])
            .then_with(|| compare_rows(&v[i * d..(i + 1) * d], &v[j * d..(j + 1) * d]))
    });
    order
}

impl Backward for AttentionOp {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn backward(&self, cx: &mut BackwardCx<'_>, _: &Tensor, grad: &[f64]) -> Result<()> {
        let (qv, kv, vv) = (cx.value(self.q), cx.value(self.k), cx.value(self.v));
        let probs = cx.value(self.probs).data();
        let (b, t, d) = (qv.shape()[0], qv.shape()[1], qv.shape()[2]);
        let s = kv.shape()[1];
        let h = self.heads;
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let (want_q, want_k, want_v) = (cx.wants(self.q), cx.wants(self.k), cx.wants(self.v));
        let mut dq = if want_q { vec![0.0; b * t * d] } else { Vec::new() };
        let mut dk = if want_k { vec![0.0; b * s * d] } else { Vec::new() };
        let mut dv = if want_v { vec![0.0; b * s * d] } else { Vec::new() };
        let mut dp = vec![0.0; t * s];
        for bi in 0..b {
            for hi in 0..h {
                let p = &probs[(bi * h + hi) * t * s..(bi * h + hi + 1) * t * s];
                let col = hi * dh;
                let q_h = Mat::strided(&qv.data()[bi * t * d + col..], t, dh, d);
                let k_h = Mat::strided(&kv.data()[bi * s * d + col..], s, dh, d);
                let v_h = Mat::strided(&vv.data()[bi * s * d + col..], s, dh, d);
                let do_h = Mat::strided(&grad[bi * t * d + col..], t, dh, d);
                if want_v {
                    gemm(1.0, Mat::new(p, t, s).t(), do_h, 1.0, &mut dv[bi * s * d + col..], d);
                }
                if !(want_q || want_k) {
                    continue;
                }
                gemm(1.0, do_h, v_h.t(), 0.0, &mut dp, s);
                for (dp_row, p_row) in dp.chunks_exact_mut(s).zip(p.chunks_exact(s)) {
                    let dot = lane_dot(dp_row, p_row);
                    for (x, pv) in dp_row.iter_mut().zip(p_row) {
                        *x = pv * (*x - dot) * scale;
                    }
                }
                let ds = Mat::new(&dp, t, s);
                if want_q {
                    gemm(1.0, ds, k_h, 1.0, &mut dq[bi * t * d + col..], d);
                }
                if want_k {
                    gemm(1.0, ds.t(), q_h, 1.0, &mut dk[bi * s * d + col..], d);
                }
            }
        }
        if want_q {
            cx.accumulate(self.q, &dq);
        }
        if want_k {
            cx.accumulate(self.k, &dk);
        }
        if want_v {
            cx.accumulate(self.v, &dv);
        }
        Ok(())
    }
}

impl Graph {
    /// Multi-head attention core over already projected tokens.
    ///
    /// `q` is `(B, T, d)`, `k` and `v` are `(B, S, d)`. Head `i` uses feature
    /// columns `[i*d/heads, (i+1)*d/heads)`. Returns the concatenated head
    /// outputs `(B, T, d)` and the attention probabilities
    /// `(B, heads, T, S)`; the latter is not differentiable.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<(Var, Var)> {
        let (sq, sk, sv) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        if sq.len() != 3 || sk.len() != 3 || sk != sv || sq[0] != sk[0] || sq[2] != sk[2] {
            return Err(Error::shape("attention", format!("q {sq:?}, k {sk:?}, v {sv:?}")));
        }
        let (b, t, d) = (sq[0], sq[1], sq[2]);
        let s = sk[1];
        if heads == 0 || d % heads != 0 {
            return Err(Error::invalid(format!("embedding dim {d} not divisible by {heads} heads")));
        }
        if t == 0 || s == 0 {
            return Err(Error::shape("attention", "empty token axis"));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());

        let mut out = vec![0.0; b * t * d];
        let mut probs = vec![0.0; b * heads * t * s];
        let mut k_sorted = vec![0.0; s * d];
        let mut v_sorted = vec![0.0; s * d];
        let mut scores = vec![0.0; t * s];
        for bi in 0..b {
            let kb = &kd[bi * s * d..(bi + 1) * s * d];
            let vb = &vd[bi * s * d..(bi + 1) * s * d];
            let order = canonical_order(kb, vb, s, d);
            for (dst, &src) in order.iter().enumerate() {
                k_sorted[dst * d..(dst + 1) * d].copy_from_slice(&kb[src * d..(src + 1) * d]);
                v_sorted[dst * d..(dst + 1) * d].copy_from_slice(&vb[src * d..(src + 1) * d]);
            }
            for hi in 0..heads {
                let col = hi * dh;
                let q_h = Mat::strided(&qd[bi * t * d + col..], t, dh, d);
                let k_h = Mat::strided(&k_sorted[col..], s, dh, d);
                let v_h = Mat::strided(&v_sorted[col..], s, dh, d);
                gemm(scale, q_h, k_h.t(), 0.0, &mut scores, s);
                for row in scores.chunks_exact_mut(s) {
                    softmax_row(row);
                }
                gemm(1.0, Mat::new(&scores, t, s), v_h, 0.0, &mut out[bi * t * d + col..], d);
                let p = &mut probs[(bi * heads + hi) * t * s..(bi * heads + hi + 1) * t * s];
                for (p_row, s_row) in p.chunks_exact_mut(s).zip(scores.chunks_exact(s)) {
                    for (j, &src) in order.iter().enumerate() {
                        p_row[src] = s_row[j];
                    }
                }
            }
        }
        let probs = self.push_aux(Tensor::from_vec(probs, &[b, heads, t, s])?);
        let out = Tensor::from_vec(out, &[b, t, d])?;
        let out = self.push(out, &[q, k, v], AttentionOp { q, k, v, heads, probs })?;
        Ok((out, probs))
    }
}
