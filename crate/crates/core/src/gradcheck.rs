//! Central finite differences as an independent check on [`Tape::backward`].

use std::collections::BTreeMap;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Gradient norms below this are treated as zero when forming relative errors.
pub const NORM_FLOOR: f64 = 1e-8;

/// Estimates `∂f/∂θ` for every scalar of every parameter (or of `only`, when
/// given) as `(f(θ+ε) − f(θ−ε)) / 2ε`.
pub fn finite_diff_grad<F>(
    store: &ParamStore,
    eps: f64,
    only: Option<&[&str]>,
    mut f: F,
) -> Result<BTreeMap<String, Tensor>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::config(format!("finite-difference eps must be > 0, got {eps}")));
    }
    let mut work = store.clone();
    let names: Vec<String> = match only {
        Some(list) => list.iter().map(|s| s.to_string()).collect(),
        None => store.names().map(str::to_string).collect(),
    };
    let mut out = BTreeMap::new();
    for name in names {
        let base = store
            .get(&name)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))?
            .clone();
        let mut grad = Tensor::zeros(base.shape());
        for i in 0..base.numel() {
            let orig = base.data()[i];
            work.value_mut(&name).unwrap().data_mut()[i] = orig + eps;
            let plus = f(&work)?;
            work.value_mut(&name).unwrap().data_mut()[i] = orig - eps;
            let minus = f(&work)?;
            work.value_mut(&name).unwrap().data_mut()[i] = orig;
            grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
        }
        out.insert(name, grad);
    }
    Ok(out)
}

/// Runs `f` on a fresh tape and returns `∂loss/∂θ` for every parameter in
/// the store (zeros for parameters the loss does not reach).
pub fn backprop_grads<F>(store: &ParamStore, f: F) -> Result<BTreeMap<String, Tensor>>
where
    F: FnOnce(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    let mut out: BTreeMap<String, Tensor> = store
        .iter()
        .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
        .collect();
    for (name, var) in tape.bound_params() {
        if let Some(g) = grads.get(*var) {
            out.insert(name.clone(), g.clone());
        }
    }
    Ok(out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` over one parameter tensor, with the
/// denominator floored at [`NORM_FLOOR`].
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / a.l2_norm().max(b.l2_norm()).max(NORM_FLOOR)
}

/// Per-parameter comparison of analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn compare(analytic: &BTreeMap<String, Tensor>, numeric: &BTreeMap<String, Tensor>) -> Self {
        let per_param = numeric
            .iter()
            .map(|(name, n)| {
                let a = &analytic[name];
                (name.clone(), relative_error(a, n))
            })
            .collect();
        GradCheckReport { per_param }
    }

    pub fn max_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_param
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Backprop vs. central differences for a loss built by `f`.
pub fn check<F>(store: &ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let analytic = backprop_grads(store, &f)?;
    let numeric = finite_diff_grad(store, eps, None, |s| {
        let mut tape = Tape::new();
        let loss = f(&mut tape, s)?;
        Ok(tape.value(loss).item())
    })?;
    Ok(GradCheckReport::compare(&analytic, &numeric))
}
