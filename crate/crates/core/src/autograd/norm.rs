use super::{Backward, BackwardCx, Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::{lane_dot, lane_sq_dev, lane_sum};
use crate::tensor::Tensor;

/// Per-channel batch statistics (biased variance) from a training-mode
/// batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Elements per channel the statistics were taken over.
    pub count: usize,
}

/// Normalisation with saved `xhat` and `1/std` per group, shared by batch
/// and layer norm. Groups are channels (batch norm) or rows (layer norm).
struct NormOp {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    layout: NormLayout,
    /// Eval-mode batch norm: statistics are constants.
    frozen_stats: bool,
}

#[derive(Clone, Copy)]
enum NormLayout {
    /// (B, C, H, W), statistics per channel.
    Channels { batch: usize, channels: usize, plane: usize },
    /// (.., d), statistics per row, affine per feature.
    Rows { rows: usize, dim: usize },
}

impl NormLayout {
    /// Calls `f(group, span, channel)` for every contiguous run of elements
    /// sharing a group. `channel` is the affine index for batch norm; for
    /// layer norm the affine index is the position within the span.
    fn for_each_span(&self, mut f: impl FnMut(usize, std::ops::Range<usize>, Option<usize>)) {
        match *self {
            NormLayout::Channels { batch, channels, plane } => {
                for b in 0..batch {
                    for c in 0..channels {
                        let base = (b * channels + c) * plane;
                        f(c, base..base + plane, Some(c));
                    }
                }
            }
            NormLayout::Rows { rows, dim } => {
                for r in 0..rows {
                    f(r, r * dim..(r + 1) * dim, None);
                }
            }
        }
    }

    fn groups(&self) -> usize {
        match *self {
            NormLayout::Channels { channels, .. } => channels,
            NormLayout::Rows { rows, .. } => rows,
        }
    }

    fn group_size(&self) -> usize {
        match *self {
            NormLayout::Channels { batch, plane, .. } => batch * plane,
            NormLayout::Rows { dim, .. } => dim,
        }
    }
}

impl Backward for NormOp {
    fn name(&self) -> &'static str {
        match self.layout {
            NormLayout::Channels { .. } => "batchnorm2d",
            NormLayout::Rows { .. } => "layernorm",
        }
    }

    fn backward(&self, cx: &mut BackwardCx<'_>, _: &Tensor, grad: &[f64]) -> Result<()> {
        let gamma = cx.value(self.gamma).data();
        let groups = self.layout.groups();
        let n = self.layout.group_size() as f64;
        if cx.wants(self.gamma) || cx.wants(self.beta) {
            let features = gamma.len();
            let mut dgamma = vec![0.0; features];
            let mut dbeta = vec![0.0; features];
            self.layout.for_each_span(|_, span, channel| {
                let (g, xh) = (&grad[span.clone()], &self.xhat[span]);
                match channel {
                    Some(c) => {
                        dgamma[c] += lane_dot(g, xh);
                        dbeta[c] += lane_sum(g);
                    }
                    None => {
                        for j in 0..g.len() {
                            dgamma[j] += g[j] * xh[j];
                            dbeta[j] += g[j];
                        }
                    }
                }
            });
            cx.accumulate(self.gamma, &dgamma);
            cx.accumulate(self.beta, &dbeta);
        }
        if !cx.wants(self.x) {
            return Ok(());
        }
        // Per group: sum of g and of g * xhat, with g scaled by gamma when
        // gamma varies inside the group.
        let mut s1 = vec![0.0; groups];
        let mut s2 = vec![0.0; groups];
        let mut scaled = Vec::new();
        if !self.frozen_stats {
            self.layout.for_each_span(|grp, span, channel| {
                let (g, xh) = (&grad[span.clone()], &self.xhat[span]);
                match channel {
                    Some(_) => {
                        s1[grp] += lane_sum(g);
                        s2[grp] += lane_dot(g, xh);
                    }
                    None => {
                        scaled.clear();
                        scaled.extend(g.iter().zip(gamma).map(|(a, b)| a * b));
                        s1[grp] = lane_sum(&scaled);
                        s2[grp] = lane_dot(&scaled, xh);
                    }
                }
            });
        }
        let gx = cx.grad_mut(self.x);
        self.layout.for_each_span(|grp, span, channel| {
            let (g, xh, out) = (&grad[span.clone()], &self.xhat[span.clone()], &mut gx[span]);
            let k = self.inv_std[grp];
            match (self.frozen_stats, channel) {
                (true, Some(c)) => {
                    let k = k * gamma[c];
                    for (o, &gi) in out.iter_mut().zip(g) {
                        *o += gi * k;
                    }
                }
                (true, None) => {
                    for j in 0..out.len() {
                        out[j] += g[j] * gamma[j] * k;
                    }
                }
                (false, Some(c)) => {
                    let (a, m1, m2) = (k * gamma[c], s1[grp] / n, s2[grp] / n);
                    for j in 0..out.len() {
                        out[j] += a * (g[j] - m1 - xh[j] * m2);
                    }
                }
                (false, None) => {
                    let k = k / n;
                    let (t1, t2) = (s1[grp], s2[grp]);
                    for j in 0..out.len() {
                        out[j] += k * (n * g[j] * gamma[j] - t1 - xh[j] * t2);
                    }
                }
            }
        });
        Ok(())
    }
}

impl Graph {
    fn check_affine(&self, op: &'static str, gamma: Var, beta: Var, features: usize) -> Result<()> {
        if self.shape(gamma) != [features] || self.shape(beta) != [features] {
            return Err(Error::shape(
                op,
                format!("affine {:?}/{:?} for {features} features", self.shape(gamma), self.shape(beta)),
            ));
        }
        Ok(())
    }

    fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        layout: NormLayout,
        mean: &[f64],
        inv_std: Vec<f64>,
        frozen_stats: bool,
    ) -> Result<Var> {
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let xd = self.value(x).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        layout.for_each_span(|grp, span, channel| {
            let (m, k) = (mean[grp], inv_std[grp]);
            let (xs, xh, o) = (&xd[span.clone()], &mut xhat[span.clone()], &mut out[span]);
            for (h, &v) in xh.iter_mut().zip(xs) {
                *h = (v - m) * k;
            }
            match channel {
                Some(c) => {
                    for (o, &h) in o.iter_mut().zip(xh.iter()) {
                        *o = g[c] * h + b[c];
                    }
                }
                None => {
                    for j in 0..o.len() {
                        o[j] = g[j] * xh[j] + b[j];
                    }
                }
            }
        });
        let value = Tensor::from_vec(out, self.shape(x))?;
        let op = NormOp { x, gamma, beta, xhat, inv_std, layout, frozen_stats };
        self.push(value, &[x, gamma, beta], op)
    }

    fn channel_layout(&self, op: &'static str, x: Var) -> Result<NormLayout> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(Error::shape(op, format!("input {s:?}")));
        }
        Ok(NormLayout::Channels { batch: s[0], channels: s[1], plane: s[2] * s[3] })
    }

    /// Training-mode batch norm using the statistics of this batch.
    pub fn batchnorm2d_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let layout = self.channel_layout("batchnorm2d", x)?;
        let channels = layout.groups();
        self.check_affine("batchnorm2d", gamma, beta, channels)?;
        let count = layout.group_size();
        if count == 0 {
            return Err(Error::shape("batchnorm2d", "empty batch"));
        }
        let xd = self.value(x).data();
        let mut mean = vec![0.0; channels];
        layout.for_each_span(|c, span, _| mean[c] += lane_sum(&xd[span]));
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; channels];
        layout.for_each_span(|c, span, _| var[c] += lane_sq_dev(&xd[span], mean[c]));
        var.iter_mut().for_each(|v| *v /= count as f64);
        let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let out = self.normalize(x, gamma, beta, layout, &mean, inv_std, false)?;
        Ok((out, BatchStats { mean, var, count }))
    }

    /// Eval-mode batch norm with fixed running statistics.
    pub fn batchnorm2d_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let layout = self.channel_layout("batchnorm2d", x)?;
        let channels = layout.groups();
        self.check_affine("batchnorm2d", gamma, beta, channels)?;
        if running_mean.len() != channels || running_var.len() != channels {
            return Err(Error::shape("batchnorm2d", "running statistics length"));
        }
        let inv_std = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.normalize(x, gamma, beta, layout, running_mean, inv_std, true)
    }

    /// Layer normalisation over the last axis.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let dim = *s.last().ok_or_else(|| Error::shape("layernorm", "rank 0 input"))?;
        self.check_affine("layernorm", gamma, beta, dim)?;
        if dim == 0 {
            return Err(Error::shape("layernorm", "empty feature axis"));
        }
        let rows = self.value(x).numel() / dim;
        let xd = self.value(x).data();
        let mut mean = Vec::with_capacity(rows);
        let mut inv_std = Vec::with_capacity(rows);
        for row in xd.chunks_exact(dim) {
            let m = lane_sum(row) / dim as f64;
            let v = lane_sq_dev(row, m) / dim as f64;
            mean.push(m);
            inv_std.push(1.0 / (v + eps).sqrt());
        }
        self.normalize(x, gamma, beta, NormLayout::Rows { rows, dim }, &mean, inv_std, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_channel_maps_to_beta() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 1, 2, 2], 3.5)).unwrap();
        let gamma = g.constant(Tensor::full(&[1], 1.0)).unwrap();
        let beta = g.constant(Tensor::zeros(&[1])).unwrap();
        let (y, stats) = g.batchnorm2d_train(x, gamma, beta, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        assert_eq!(stats.var, vec![0.0]);
        assert_eq!(stats.count, 8);
    }

    #[test]
    fn layernorm_rows_are_standardised() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1., 2., 3., 4., -1., 0., 5., 8.], &[2, 4]).unwrap()).unwrap();
        let gamma = g.constant(Tensor::full(&[4], 1.0)).unwrap();
        let beta = g.constant(Tensor::zeros(&[4])).unwrap();
        let y = g.layernorm(x, gamma, beta, 0.0).unwrap();
        for row in g.value(y).data().chunks(4) {
            let m: f64 = row.iter().sum::<f64>() / 4.0;
            let v: f64 = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }
}
