use rand_chacha::ChaCha8Rng;

use super::init::{kaiming_uniform, xavier_uniform};
use super::params::{ParamId, ParamStore, Session};
use crate::autograd::{Conv2dSpec, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-5;

/// Registers parameters under a dotted name prefix.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Builder { store, rng, prefix: String::new() }
    }

    /// A builder whose names are nested under `name`.
    pub fn scope(&mut self, name: &str) -> Builder<'_> {
        let prefix = self.full(name);
        Builder { store: self.store, rng: self.rng, prefix }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn param(&mut self, name: &str, value: Tensor) -> ParamId {
        let n = self.full(name);
        self.store.add_param(&n, value)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        let n = self.full(name);
        self.store.add_buffer(&n, value)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv2dSpec,
}

impl Conv2d {
    pub fn new(b: &mut Builder<'_>, in_ch: usize, out_ch: usize, kernel: usize, spec: Conv2dSpec, bias: bool) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let w = kaiming_uniform(b.rng, &[out_ch, in_ch, kernel, kernel], fan_in);
        let weight = b.param("weight", w);
        let bias = bias.then(|| b.param("bias", Tensor::zeros(&[out_ch])));
        Conv2d { weight, bias, spec }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let w = s.param(self.weight)?;
        let b = self.bias.map(|id| s.param(id)).transpose()?;
        s.graph.conv2d(x, w, b, self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batches_tracked: ParamId,
}

impl BatchNorm2d {
    pub fn new(b: &mut Builder<'_>, channels: usize) -> Self {
        BatchNorm2d {
            gamma: b.param("weight", Tensor::full(&[channels], 1.0)),
            beta: b.param("bias", Tensor::zeros(&[channels])),
            running_mean: b.buffer("running_mean", Tensor::zeros(&[channels])),
            running_var: b.buffer("running_var", Tensor::full(&[channels], 1.0)),
            batches_tracked: b.buffer("num_batches_tracked", Tensor::scalar(0.0)),
        }
    }

    /// Train mode normalises with batch statistics and folds them into the
    /// running estimates; eval mode uses the running estimates.
    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (gamma, beta) = (s.param(self.gamma)?, s.param(self.beta)?);
        if s.is_train() {
            let (y, stats) = s.graph.batchnorm2d_train(x, gamma, beta, BN_EPS)?;
            let n = stats.count as f64;
            let unbias = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
            let store = s.store_mut();
            for (r, m) in store.get_mut(self.running_mean).data_mut().iter_mut().zip(&stats.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            for (r, v) in store.get_mut(self.running_var).data_mut().iter_mut().zip(&stats.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
            }
            store.get_mut(self.batches_tracked).data_mut()[0] += 1.0;
            Ok(y)
        } else {
            let store = s.store();
            if store.get(self.batches_tracked).data()[0] == 0.0 {
                return Err(Error::invalid(format!(
                    "{}: eval mode before any batch statistics were recorded",
                    store.name(self.gamma)
                )));
            }
            let mean = store.get(self.running_mean).data().to_vec();
            let var = store.get(self.running_var).data().to_vec();
            s.graph.batchnorm2d_eval(x, gamma, beta, &mean, &var, BN_EPS)
        }
    }
}

/// 3x3 (or other odd kernel) same-padded conv, batch norm, relu.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new(b: &mut Builder<'_>, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        let spec = Conv2dSpec { stride: 1, padding: kernel / 2 };
        ConvBnRelu {
            conv: Conv2d::new(&mut b.scope("conv"), in_ch, out_ch, kernel, spec, false),
            bn: BatchNorm2d::new(&mut b.scope("bn"), out_ch),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        let y = self.bn.forward(s, y)?;
        s.graph.relu(y)
    }
}

/// Affine map over the last axis, weight stored as `(d_in, d_out)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(b: &mut Builder<'_>, d_in: usize, d_out: usize) -> Self {
        let w = xavier_uniform(b.rng, &[d_in, d_out], d_in, d_out);
        Linear {
            weight: b.param("weight", w),
            bias: b.param("bias", Tensor::zeros(&[d_out])),
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight)?, s.param(self.bias)?);
        s.graph.linear(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(b: &mut Builder<'_>, dim: usize) -> Self {
        LayerNorm {
            gamma: b.param("weight", Tensor::full(&[dim], 1.0)),
            beta: b.param("bias", Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (g, b) = (s.param(self.gamma)?, s.param(self.beta)?);
        s.graph.layernorm(x, g, b, LN_EPS)
    }
}
