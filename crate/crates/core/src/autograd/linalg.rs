use super::{Backward, BackwardCx, Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::{gemm, Mat};
use crate::tensor::Tensor;

struct MatMulOp {
    a: Var,
    b: Var,
}

impl Backward for MatMulOp {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, cx: &mut BackwardCx<'_>, _: &Tensor, grad: &[f64]) -> Result<()> {
        let (av, bv) = (cx.value(self.a), cx.value(self.b));
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let n = bv.shape()[1];
        let dc = Mat::new(grad, m, n);
        if cx.wants(self.a) {
            // dA = dC · Bᵀ
            gemm(1.0, dc, Mat::new(bv.data(), k, n).t(), 1.0, cx.grad_mut(self.a), k);
        }
        if cx.wants(self.b) {
            // dB = Aᵀ · dC
            gemm(1.0, Mat::new(av.data(), m, k).t(), dc, 1.0, cx.grad_mut(self.b), n);
        }
        Ok(())
    }
}

struct LinearOp {
    x: Var,
    w: Var,
    b: Option<Var>,
}

impl Backward for LinearOp {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, cx: &mut BackwardCx<'_>, _: &Tensor, grad: &[f64]) -> Result<()> {
        let (xv, wv) = (cx.value(self.x), cx.value(self.w));
        let (d_in, d_out) = (wv.shape()[0], wv.shape()[1]);
        let rows = xv.numel() / d_in;
        let dy = Mat::new(grad, rows, d_out);
        if cx.wants(self.x) {
            gemm(1.0, dy, Mat::new(wv.data(), d_in, d_out).t(), 1.0, cx.grad_mut(self.x), d_in);
        }
        if cx.wants(self.w) {
            gemm(1.0, Mat::new(xv.data(), rows, d_in).t(), dy, 1.0, cx.grad_mut(self.w), d_out);
        }
        if let Some(b) = self.b.filter(|&b| cx.wants(b)) {
            let gb = cx.grad_mut(b);
            for row in grad.chunks_exact(d_out) {
                for (g, r) in gb.iter_mut().zip(row) {
                    *g += r;
                }
            }
        }
        Ok(())
    }
}

impl Graph {
    /// Rank-2 matrix product `(m, k) · (k, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            1.0,
            Mat::new(self.value(a).data(), m, k),
            Mat::new(self.value(b).data(), k, n),
            0.0,
            &mut out,
            n,
        );
        let value = Tensor::from_vec(out, &[m, n])?;
        self.push(value, &[a, b], MatMulOp { a, b })
    }

    /// Affine map over the last axis: `y = x · w + b` with `w` of shape
    /// `(d_in, d_out)`. Leading axes of `x` are treated as rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sw.len() != 2 || sx.last() != Some(&sw[0]) {
            return Err(Error::shape("linear", format!("input {sx:?}, weight {sw:?}")));
        }
        let (d_in, d_out) = (sw[0], sw[1]);
        if let Some(b) = b {
            if self.shape(b) != [d_out] {
                return Err(Error::shape("linear", format!("bias {:?} for {d_out} outputs", self.shape(b))));
            }
        }
        let rows = self.value(x).numel() / d_in.max(1);
        let mut out = vec![0.0; rows * d_out];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_exact_mut(d_out) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            1.0,
            Mat::new(self.value(x).data(), rows, d_in),
            Mat::new(self.value(w).data(), d_in, d_out),
            if b.is_some() { 1.0 } else { 0.0 },
            &mut out,
            d_out,
        );
        let mut shape = sx;
        *shape.last_mut().expect("rank >= 1") = d_out;
        let value = Tensor::from_vec(out, &shape)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(value, &inputs, LinearOp { x, w, b })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
    }

    #[test]
    fn identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let x = g.constant(random(&mut rng, &[3, 4])).unwrap();
        let i = g.constant(Tensor::eye(3)).unwrap();
        let y = g.matmul(i, x).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let z = g.constant(Tensor::zeros(&[1, 3])).unwrap();
        let y = g.matmul(z, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, &[4, 5]);
        let b = random(&mut rng, &[5, 3]);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()).unwrap(), g.constant(b.clone()).unwrap());
        let c = g.matmul(va, vb).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..5 {
                    s += a.data()[i * 5 + k] * b.data()[k * 3 + j];
                }
                assert!((g.value(c).data()[i * 3 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        assert!(g.matmul(a, a).is_err());
    }
}
