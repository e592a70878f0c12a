use super::params::{EntryKind, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Number of `step` calls so far.
    pub steps: u64,
    state: Vec<Option<Moments>>,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW::new(0.01)
    }
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, steps: 0, state: Vec::new() }
    }

    /// One update of every parameter listed in `grads`. Parameters without a
    /// gradient this step are left untouched, including weight decay.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {lr}")));
        }
        if self.state.len() < store.len() {
            self.state.resize(store.len(), None);
        }
        for (id, grad) in grads {
            if store.kind(*id) != EntryKind::Param {
                return Err(Error::invalid(format!("{} is not a learnable parameter", store.name(*id))));
            }
            if grad.shape() != store.get(*id).shape() {
                return Err(Error::shape(
                    "adamw",
                    format!("{}: grad {:?} vs param {:?}", store.name(*id), grad.shape(), store.get(*id).shape()),
                ));
            }
            let n = grad.numel();
            let st = self.state[id.index()].get_or_insert_with(|| Moments { m: vec![0.0; n], v: vec![0.0; n], step: 0 });
            st.step += 1;
            let bc1 = 1.0 - self.beta1.powi(st.step as i32);
            let bc2 = 1.0 - self.beta2.powi(st.step as i32);
            let w = store.get_mut(*id).data_mut();
            for i in 0..n {
                let g = grad.data()[i];
                st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * g;
                st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = st.m[i] / bc1;
                let v_hat = st.v[i] / bc2;
                w[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps)) + lr * self.weight_decay * w[i];
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// Step decay: `base * gamma^floor(iter / step_size)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLr {
    pub base: f64,
    pub step_size: u64,
    pub gamma: f64,
}

impl Default for StepLr {
    fn default() -> Self {
        StepLr { base: 1e-4, step_size: 60_000, gamma: 0.5 }
    }
}

impl StepLr {
    pub fn lr(&self, iter: u64) -> f64 {
        let k = iter / self.step_size.max(1);
        self.base * self.gamma.powi(k.min(i32::MAX as u64) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_param(w: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add_param("w", Tensor::from_slice(&[w], &[1]).unwrap());
        (store, id)
    }

    fn g(x: f64) -> Tensor {
        Tensor::from_slice(&[x], &[1]).unwrap()
    }

    #[test]
    fn first_step_closed_form() {
        let (mut store, id) = one_param(0.0);
        let mut opt = AdamW::new(0.0);
        opt.step(&mut store, &[(id, g(1.0))], 0.1).unwrap();
        let w = store.get(id).data()[0];
        assert!((w + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(opt.steps, 1);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let (mut store, id) = one_param(1.25);
        let mut opt = AdamW::new(0.0);
        for _ in 0..10 {
            opt.step(&mut store, &[(id, g(0.0))], 0.1).unwrap();
        }
        assert_eq!(store.get(id).data()[0], 1.25);
    }

    #[test]
    fn decoupled_decay_alone() {
        let (mut store, id) = one_param(2.0);
        let mut opt = AdamW::new(0.5);
        opt.step(&mut store, &[(id, g(0.0))], 0.1).unwrap();
        assert!((store.get(id).data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn converges_on_quadratic() {
        let (mut store, id) = one_param(0.0);
        let mut opt = AdamW::new(0.0);
        for _ in 0..200 {
            let w = store.get(id).data()[0];
            opt.step(&mut store, &[(id, g(2.0 * (w - 3.0)))], 0.05).unwrap();
        }
        assert!((store.get(id).data()[0] - 3.0).abs() < 0.1);
    }

    #[test]
    fn rejects_buffers_and_bad_lr() {
        let mut store = ParamStore::new();
        let b = store.add_buffer("b", g(0.0));
        let mut opt = AdamW::default();
        assert!(opt.step(&mut store, &[(b, g(1.0))], 0.1).is_err());
        assert!(opt.step(&mut store, &[], 0.0).is_err());
    }

    #[test]
    fn schedule_values() {
        let s = StepLr::default();
        assert_eq!(s.lr(0), 1e-4);
        assert_eq!(s.lr(59_999), 1e-4);
        assert_eq!(s.lr(60_000), 5e-5);
        assert_eq!(s.lr(120_000), 2.5e-5);
    }

    proptest! {
        #[test]
        fn schedule_is_non_increasing(a in 0u64..1_000_000, d in 0u64..1_000_000, step in 1u64..100_000) {
            let s = StepLr { step_size: step, ..StepLr::default() };
            prop_assert!(s.lr(a + d) <= s.lr(a));
        }
    }
}
