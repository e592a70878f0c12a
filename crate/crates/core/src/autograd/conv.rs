use super::{Backward, BackwardCx, Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::{col2im_add, gemm, im2col, ConvGeom, Mat};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec { stride: 1, padding: 0 }
    }
}

struct Conv2dOp {
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: ConvGeom,
}

impl Backward for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, cx: &mut BackwardCx<'_>, out: &Tensor, grad: &[f64]) -> Result<()> {
        let g = &self.geom;
        let (xv, wv) = (cx.value(self.x), cx.value(self.w));
        let batch = xv.shape()[0];
        let c_out = out.shape()[1];
        let (k, ol) = (g.patch_len(), g.out_len());
        let in_len = g.channels * g.height * g.width;
        let weight = Mat::new(wv.data(), c_out, k);
        let (want_x, want_w) = (cx.wants(self.x), cx.wants(self.w));

        let mut dw = if want_w { vec![0.0; c_out * k] } else { Vec::new() };
        let mut dx = if want_x { vec![0.0; xv.numel()] } else { Vec::new() };
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * ol] };
        for bi in 0..batch {
            let xb = &xv.data()[bi * in_len..(bi + 1) * in_len];
            let dy = Mat::new(&grad[bi * c_out * ol..(bi + 1) * c_out * ol], c_out, ol);
            if want_w {
                let cols_b: &[f64] = if g.is_pointwise() {
                    xb
                } else {
                    im2col(xb, g, &mut cols);
                    &cols
                };
                gemm(1.0, dy, Mat::new(cols_b, k, ol).t(), 1.0, &mut dw, k);
            }
            if want_x {
                let dxb = &mut dx[bi * in_len..(bi + 1) * in_len];
                if g.is_pointwise() {
                    gemm(1.0, weight.t(), dy, 1.0, dxb, ol);
                } else {
                    gemm(1.0, weight.t(), dy, 0.0, &mut cols, ol);
                    col2im_add(&cols, g, dxb);
                }
            }
        }
        if want_w {
            cx.accumulate(self.w, &dw);
        }
        if want_x {
            cx.accumulate(self.x, &dx);
        }
        if let Some(b) = self.b.filter(|&b| cx.wants(b)) {
            let gb = cx.grad_mut(b);
            for (i, plane) in grad.chunks_exact(ol).enumerate() {
                gb[i % c_out] += plane.iter().sum::<f64>();
            }
        }
        Ok(())
    }
}

struct MaxPoolOp {
    x: Var,
    argmax: Vec<usize>,
}

impl Backward for MaxPoolOp {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }

    fn backward(&self, cx: &mut BackwardCx<'_>, _: &Tensor, grad: &[f64]) -> Result<()> {
        if cx.wants(self.x) {
            let gx = cx.grad_mut(self.x);
            for (&src, g) in self.argmax.iter().zip(grad) {
                gx[src] += g;
            }
        }
        Ok(())
    }
}

struct GlobalAvgPoolOp(Var);

impl Backward for GlobalAvgPoolOp {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn backward(&self, cx: &mut BackwardCx<'_>, _: &Tensor, grad: &[f64]) -> Result<()> {
        if cx.wants(self.0) {
            let shape = cx.value(self.0).shape();
            let plane = shape[2] * shape[3];
            let inv = 1.0 / plane as f64;
            let gx = cx.grad_mut(self.0);
            for (chunk, g) in gx.chunks_exact_mut(plane).zip(grad) {
                for v in chunk {
                    *v += g * inv;
                }
            }
        }
        Ok(())
    }
}

fn out_extent(op: &'static str, size: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel || (padded - kernel) % stride != 0 {
        return Err(Error::shape(
            op,
            format!("extent {size} with kernel {kernel}, stride {stride}, padding {pad} is not integral"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

impl Graph {
    /// 2-D cross-correlation of `x (B, Cin, H, W)` with `w (Cout, Cin, kh, kw)`
    /// plus an optional per-channel bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::shape("conv2d", format!("input {sx:?}, weight {sw:?}")));
        }
        let c_out = sw[0];
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::shape("conv2d", format!("bias {:?} for {c_out} channels", self.shape(b))));
            }
        }
        let geom = ConvGeom {
            channels: sx[1],
            height: sx[2],
            width: sx[3],
            kh: sw[2],
            kw: sw[3],
            stride: spec.stride,
            pad: spec.padding,
            out_h: out_extent("conv2d", sx[2], sw[2], spec.stride, spec.padding)?,
            out_w: out_extent("conv2d", sx[3], sw[3], spec.stride, spec.padding)?,
        };
        let batch = sx[0];
        let (k, ol) = (geom.patch_len(), geom.out_len());
        let in_len = geom.channels * geom.height * geom.width;
        let mut out = vec![0.0; batch * c_out * ol];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for (i, plane) in out.chunks_exact_mut(ol).enumerate() {
                plane.fill(bias[i % c_out]);
            }
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        let weight = Mat::new(self.value(w).data(), c_out, k);
        let xd = self.value(x).data();
        let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![0.0; k * ol] };
        for bi in 0..batch {
            let xb = &xd[bi * in_len..(bi + 1) * in_len];
            let cols_b: &[f64] = if geom.is_pointwise() {
                xb
            } else {
                im2col(xb, &geom, &mut cols);
                &cols
            };
            gemm(1.0, weight, Mat::new(cols_b, k, ol), beta, &mut out[bi * c_out * ol..], ol);
        }
        let value = Tensor::from_vec(out, &[batch, c_out, geom.out_h, geom.out_w])?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(value, &inputs, Conv2dOp { x, w, b, geom })
    }

    /// Max pooling with a square window and no padding.
    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("maxpool2d", format!("input {s:?}")));
        }
        let oh = out_extent("maxpool2d", s[2], kernel, stride, 0)?;
        let ow = out_extent("maxpool2d", s[3], kernel, stride, 0)?;
        let xd = self.value(x).data();
        let planes = s[0] * s[1];
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * s[2] * s[3];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * s[3] + ox * stride;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let idx = base + (oy * stride + ky) * s[3] + ox * stride + kx;
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::from_vec(out, &[s[0], s[1], oh, ow])?;
        self.push(value, &[x], MaxPoolOp { x, argmax })
    }

    /// Mean over the spatial axes: `(B, C, H, W) -> (B, C)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] * s[3] == 0 {
            return Err(Error::shape("global_avg_pool", format!("input {s:?}")));
        }
        let plane = s[2] * s[3];
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(plane)
            .map(|c| c.iter().sum::<f64>() / plane as f64)
            .collect();
        let value = Tensor::from_vec(data, &[s[0], s[1]])?;
        self.push(value, &[x], GlobalAvgPoolOp(x))
    }
}
