//! Named finite-difference checks covering every differentiable operation,
//! grouped the way the command line exposes them.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_inputs, check_params, random_projection, GradReport};
use crate::autograd::Conv2dSpec;
use crate::error::{Error, Result};
use crate::fsf::{AblationMode, FsfParams};
use crate::model::{ModelConfig, MswtModel};
use crate::autograd::Var;
use crate::nn::{Builder, Mha, Mode, ParamId, ParamStore, Session, TransformerBlock};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    All,
    /// Tensor primitives and neural layers.
    Nn,
    Wavelet,
    Fsf,
    Model,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::All => "all",
            Suite::Nn => "nn",
            Suite::Wavelet => "wavelet",
            Suite::Fsf => "fsf",
            Suite::Model => "model",
        }
    }

    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Suite::All, Suite::Nn, Suite::Wavelet, Suite::Fsf, Suite::Model]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown gradcheck module {s:?}")))
    }
}

/// Key-projection biases add the same amount to every score of a row, so
/// their gradient is zero up to roundoff and a relative check is
/// meaningless. They are skipped.
pub fn is_key_bias(name: &str) -> bool {
    let mut parts = name.rsplit('.');
    parts.next() == Some("bias") && parts.next() == Some("k")
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).expect("shape")
}

/// Values bounded away from zero, so relu kinks are not probed.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    random(rng, shape).map(|v| if v < 0.0 { v - 0.1 } else { v + 0.1 })
}

/// Distinct values with gaps far larger than the probe step, so max pooling
/// never switches its argmax.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_vec(idx.into_iter().map(|k| k as f64 * 0.01).collect(), shape).expect("shape")
}

fn trainable(store: &ParamStore) -> Vec<ParamId> {
    store.param_ids().filter(|&id| !is_key_bias(store.name(id))).collect()
}

fn nn_cases(out: &mut Vec<GradReport>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let r = &mut rng;

    out.push(check_inputs("matmul", &[random(r, &[3, 4]), random(r, &[4, 2])], None, |g, v| {
        let y = g.matmul(v[0], v[1])?;
        random_projection(g, y, 1)
    })?);
    out.push(check_inputs("elementwise", &[random(r, &[2, 3]), random(r, &[2, 3])], None, |g, v| {
        let a = g.add(v[0], v[1])?;
        let b = g.sub(a, v[1])?;
        let c = g.mul(b, v[1])?;
        let d = g.scale(c, -1.5)?;
        let e = g.add_scalar(d, 0.25)?;
        let f = g.mul(e, v[0])?;
        random_projection(g, f, 2)
    })?);
    out.push(check_inputs("reshape_permute_transpose", &[random(r, &[2, 3, 4])], None, |g, v| {
        let p = g.permute(v[0], &[2, 0, 1])?;
        let q = g.reshape(p, &[4, 6])?;
        let t = g.transpose(q)?;
        random_projection(g, t, 3)
    })?);
    out.push(check_inputs("concat_slice", &[random(r, &[2, 2, 3]), random(r, &[2, 1, 3])], None, |g, v| {
        let c = g.concat(&[v[0], v[1], v[0]], 1)?;
        let s = g.slice(c, 1, 1, 3)?;
        random_projection(g, s, 4)
    })?);
    out.push(check_inputs("sum_mean", &[random(r, &[3, 3])], None, |g, v| {
        let sq = g.mul(v[0], v[0])?;
        let a = g.sum(sq)?;
        let b = g.mean(v[0])?;
        let b = g.mul(b, b)?;
        g.add(a, b)
    })?);
    out.push(check_inputs("add_bias", &[random(r, &[2, 3, 2, 2]), random(r, &[3])], None, |g, v| {
        let y = g.add_bias(v[0], v[1], 1)?;
        random_projection(g, y, 5)
    })?);
    out.push(check_inputs("relu", &[away_from_zero(r, &[4, 5])], None, |g, v| {
        let y = g.relu(v[0])?;
        random_projection(g, y, 6)
    })?);
    out.push(check_inputs("softmax", &[random(r, &[2, 3, 4])], None, |g, v| {
        let a = g.softmax(v[0], 1)?;
        let b = g.softmax(v[0], 2)?;
        let y = g.add(a, b)?;
        random_projection(g, y, 7)
    })?);
    out.push(check_inputs("cross_entropy", &[random(r, &[4, 2])], None, |g, v| {
        g.cross_entropy(v[0], &[0, 1, 1, 0])
    })?);
    out.push(check_inputs("conv2d", &[random(r, &[2, 2, 5, 5]), random(r, &[3, 2, 3, 3]), random(r, &[3])], None, |g, v| {
        let a = g.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec { stride: 2, padding: 1 })?;
        let pa = random_projection(g, a, 8)?;
        let b = g.conv2d(v[0], v[1], None, Conv2dSpec { stride: 1, padding: 0 })?;
        let pb = random_projection(g, b, 9)?;
        g.add(pa, pb)
    })?);
    out.push(check_inputs("maxpool2d", &[distinct(r, &[2, 2, 4, 4])], None, |g, v| {
        let y = g.maxpool2d(v[0], 2, 2)?;
        random_projection(g, y, 10)
    })?);
    out.push(check_inputs("global_avg_pool", &[random(r, &[2, 3, 3, 3])], None, |g, v| {
        let y = g.global_avg_pool(v[0])?;
        random_projection(g, y, 11)
    })?);
    let (mean, var) = (vec![0.1, -0.2, 0.3], vec![0.5, 1.5, 2.0]);
    out.push(check_inputs("batchnorm2d_train", &[random(r, &[3, 3, 2, 2]), random(r, &[3]), random(r, &[3])], None, |g, v| {
        let (y, _) = g.batchnorm2d_train(v[0], v[1], v[2], 1e-5)?;
        random_projection(g, y, 12)
    })?);
    out.push(check_inputs("batchnorm2d_eval", &[random(r, &[2, 3, 2, 2]), random(r, &[3]), random(r, &[3])], None, |g, v| {
        let y = g.batchnorm2d_eval(v[0], v[1], v[2], &mean, &var, 1e-5)?;
        random_projection(g, y, 13)
    })?);
    out.push(check_inputs("layernorm", &[random(r, &[2, 3, 5]), random(r, &[5]), random(r, &[5])], None, |g, v| {
        let y = g.layernorm(v[0], v[1], v[2], 1e-5)?;
        random_projection(g, y, 14)
    })?);
    out.push(check_inputs("linear", &[random(r, &[2, 3, 4]), random(r, &[4, 5]), random(r, &[5])], None, |g, v| {
        let y = g.linear(v[0], v[1], Some(v[2]))?;
        random_projection(g, y, 15)
    })?);
    out.push(check_inputs("attention", &[random(r, &[2, 3, 4]), random(r, &[2, 5, 4]), random(r, &[2, 5, 4])], None, |g, v| {
        let (y, _) = g.attention(v[0], v[1], v[2], 2)?;
        random_projection(g, y, 16)
    })?);

    // Layer-level checks. Inputs are registered in the store so their
    // gradients are checked alongside the weights.
    let mut store = ParamStore::new();
    let mut init = ChaCha8Rng::seed_from_u64(12);
    let (mha, block, q, kv) = {
        let mut b = Builder::new(&mut store, &mut init);
        let mha = Mha::new(&mut b.scope("mha"), 6, 2)?;
        let block = TransformerBlock::new(&mut b.scope("block"), 6, 3)?;
        let q = b.param("input.q", random(r, &[2, 4, 6]));
        let kv = b.param("input.kv", random(r, &[2, 5, 6]));
        (mha, block, q, kv)
    };
    let ids = |store: &ParamStore, prefixes: &[&str]| -> Vec<ParamId> {
        trainable(store).into_iter().filter(|&id| prefixes.iter().any(|p| store.name(id).starts_with(p))).collect()
    };
    let mha_ids = ids(&store, &["mha.", "input."]);
    out.push(check_params("mha", &mut store, &mha_ids, None, 17, |s| {
        let (q, kv) = (s.param(q)?, s.param(kv)?);
        let (y, _) = mha.forward(s, q, kv, kv)?;
        random_projection(&mut s.graph, y, 18)
    })?);
    let block_ids = ids(&store, &["block.", "input."]);
    out.push(check_params("transformer_block", &mut store, &block_ids, None, 19, |s| {
        let (q, kv) = (s.param(q)?, s.param(kv)?);
        let (y, _) = block.forward(s, q, kv)?;
        random_projection(&mut s.graph, y, 20)
    })?);
    Ok(())
}

fn wavelet_cases(out: &mut Vec<GradReport>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    out.push(check_inputs("dwt2", &[random(&mut rng, &[2, 2, 4, 6])], None, |g, v| {
        let l = g.dwt2(v[0])?;
        let y = g.concat(&[l.ll, l.lh, l.hl, l.hh], 1)?;
        random_projection(g, y, 22)
    })?);
    out.push(check_inputs("wavelet_pyramid", &[random(&mut rng, &[1, 2, 8, 8])], None, |g, v| {
        let p = g.decompose(v[0], 3)?;
        let mut total = None;
        for (k, l) in p.levels.iter().enumerate() {
            let y = g.concat(&[l.ll, l.lh, l.hl, l.hh], 1)?;
            let s = random_projection(g, y, 23 + k as u64)?;
            total = Some(match total {
                None => s,
                Some(t) => g.add(t, s)?,
            });
        }
        total.ok_or_else(|| Error::invalid("empty pyramid"))
    })?);
    Ok(())
}

fn fsf_cases(out: &mut Vec<GradReport>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut store = ParamStore::new();
    let (p, image, feat) = {
        let mut b = Builder::new(&mut store, &mut rng);
        let p = FsfParams::new(&mut b.scope("fsf"), 3, 5, 8, 2)?;
        let (x, f) = (random(b.rng, &[2, 3, 8, 8]), random(b.rng, &[2, 5, 4, 4]));
        let image = b.param("input.image", x);
        let feat = b.param("input.feat", f);
        (p, image, feat)
    };
    let checkable = trainable(&store);
    for (mode, seed) in [(AblationMode::Full, 32), (AblationMode::SaOnly, 33)] {
        let forward = |s: &mut Session<'_>| -> Result<Var> {
            let x = s.param(image)?;
            let level = s.graph.decompose(x, 1)?.levels.remove(0);
            let f = s.param(feat)?;
            let o = p.forward(s, f, &level, mode)?;
            random_projection(&mut s.graph, o.fused, seed)
        };
        // only the weights this wiring reads
        let mut s = Session::new(&mut store, Mode::Train);
        forward(&mut s)?;
        let (_, bound) = s.into_bound();
        let ids: Vec<ParamId> = checkable.iter().copied().filter(|id| bound.iter().any(|(b, _)| b == id)).collect();
        out.push(check_params(&format!("fsf_{}", mode.name()), &mut store, &ids, Some(6), seed, forward)?);
    }
    Ok(())
}

/// Small network at 16x16 input, probing a few entries of every tensor.
fn model_cases(out: &mut Vec<GradReport>) -> Result<()> {
    let config = ModelConfig {
        image_size: 16,
        widths: [4, 6, 8, 8],
        dims: [4, 6, 8],
        heads: [1, 2, 2],
        ..ModelConfig::default()
    };
    let mut m = MswtModel::new(config, 41)?;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let images = random(&mut rng, &[4, 3, 16, 16]).map(|v| 0.5 + 0.5 * v);
    let labels = [0, 1, 1, 0];
    let ids = trainable(&m.store);
    let (config, net) = (m.config.clone(), m.net.clone());
    out.push(check_params("model", &mut m.store, &ids, Some(3), 43, |s| {
        let x = s.constant(images.clone())?;
        let o = net.forward(&config, s, x)?;
        s.graph.cross_entropy(o.logits, &labels)
    })?);
    Ok(())
}

/// Runs the checks of one module (or all of them) in a fixed order.
pub fn run_suite(which: Suite) -> Result<Vec<GradReport>> {
    let mut out = Vec::new();
    if which.includes(Suite::Nn) {
        nn_cases(&mut out)?;
    }
    if which.includes(Suite::Wavelet) {
        wavelet_cases(&mut out)?;
    }
    if which.includes(Suite::Fsf) {
        fsf_cases(&mut out)?;
    }
    if which.includes(Suite::Model) {
        model_cases(&mut out)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_bias_names() {
        assert!(is_key_bias("fsf1.fsa.attn.k.bias"));
        assert!(!is_key_bias("fsf1.fsa.attn.k.weight"));
        assert!(!is_key_bias("fsf1.fsa.attn.q.bias"));
        assert!(!is_key_bias("bias"));
    }

    #[test]
    fn module_names_round_trip() {
        for m in [Suite::All, Suite::Nn, Suite::Wavelet, Suite::Fsf, Suite::Model] {
            assert_eq!(m.name().parse::<Suite>().unwrap(), m);
        }
        assert!("conv".parse::<Suite>().is_err());
    }

    #[test]
    fn nn_and_wavelet_suites_pass() {
        for which in [Suite::Nn, Suite::Wavelet] {
            for r in run_suite(which).unwrap() {
                assert!(r.passed(), "{r}");
            }
        }
    }
}
