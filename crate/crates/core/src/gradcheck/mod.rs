//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Mode, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

mod suite;
pub use suite::{is_key_bias, run_suite, Suite};

pub const EPS: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Worst entry as (analytic, numeric).
    pub worst: (f64, f64),
}

impl GradReport {
    fn new(name: &str) -> Self {
        GradReport { name: name.to_string(), checked: 0, max_rel_err: 0.0, worst: (0.0, 0.0) }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let err = rel_err(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_err || err.is_nan() {
            self.max_rel_err = err;
            self.worst = (analytic, numeric);
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_TOL
    }
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} entries, max rel err {:.3e} (analytic {:.6e}, numeric {:.6e}) {}",
            self.name,
            self.checked,
            self.max_rel_err,
            self.worst.0,
            self.worst.1,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(ABS_FLOOR)
}

/// Reduces `x` to a scalar with fixed pseudo-random weights in [-1, 1], so
/// every output entry contributes a distinct gradient.
pub fn random_projection(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(x).to_vec();
    let n = g.value(x).numel();
    let w = Tensor::from_vec((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), &shape)?;
    let w = g.constant(w)?;
    let y = g.mul(x, w)?;
    g.sum(y)
}

fn pick(len: usize, limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match limit {
        Some(k) if k < len => {
            let mut v = sample(rng, len, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

/// Checks d f / d inputs. `f` must build a scalar from the given leaves.
/// `limit` caps the number of entries probed per input.
pub fn check_inputs(
    name: &str,
    inputs: &[Tensor],
    limit: Option<usize>,
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<GradReport> {
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = values.iter().map(|t| g.constant(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars = inputs.iter().map(|t| g.param(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let grads: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let mut report = GradReport::new(name);
    let mut probe = inputs.to_vec();
    for (i, grad) in grads.iter().enumerate() {
        for j in pick(inputs[i].numel(), limit, &mut rng) {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + EPS;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - EPS;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            report.record(grad.data()[j], (plus - minus) / (2.0 * EPS));
        }
    }
    Ok(report)
}

/// Checks d f / d params for the listed store entries. `f` runs a
/// training-mode forward in the given session and returns a scalar.
pub fn check_params(
    name: &str,
    store: &mut ParamStore,
    ids: &[ParamId],
    limit: Option<usize>,
    seed: u64,
    mut f: impl FnMut(&mut Session<'_>) -> Result<Var>,
) -> Result<GradReport> {
    let grads = {
        let mut s = Session::new(store, Mode::Train);
        let out = f(&mut s)?;
        let (mut graph, bound) = s.into_bound();
        graph.backward(out)?;
        let mut grads = Vec::with_capacity(ids.len());
        for &id in ids {
            let var = bound
                .iter()
                .find(|(b, _)| *b == id)
                .map(|&(_, v)| v)
                .ok_or_else(|| Error::Graph(format!("parameter {} not used by forward", store.name(id))))?;
            grads.push(graph.grad(var).unwrap_or_else(|| Tensor::zeros(store.get(id).shape())));
        }
        grads
    };

    let mut eval = |store: &mut ParamStore| -> Result<f64> {
        let mut s = Session::new(store, Mode::Train);
        let out = f(&mut s)?;
        s.graph.value(out).item()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport::new(name);
    for (&id, grad) in ids.iter().zip(&grads) {
        for j in pick(store.get(id).numel(), limit, &mut rng) {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + EPS;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[j] = orig - EPS;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[j] = orig;
            report.record(grad.data()[j], (plus - minus) / (2.0 * EPS));
        }
    }
    Ok(report)
}
