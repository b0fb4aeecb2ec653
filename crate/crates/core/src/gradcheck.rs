//! Central finite-difference verification of tape gradients.
//!
//! Discrete selections made at the base point are replayed for every probe,
//! so the check compares against the derivative of the branch that backward
//! actually differentiated.

use crate::autograd::{Graph, Selections, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Denominator floor for the relative error. Below this magnitude the
/// comparison is effectively absolute, which keeps exact-zero gradients from
/// failing on rounding noise of order `eps * |loss| / step`.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
    pub step: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> Vec<&ParamCheck> {
        self.params.iter().filter(|p| !p.passed).collect()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Gradients of `loss_fn` with respect to `params` at the current values,
/// plus the selection log of that pass. Existing grads are left untouched.
pub fn analytic_grads<F>(store: &ParamStore, params: &[ParamId], loss_fn: &mut F) -> Result<(f64, Vec<Tensor>, Selections)>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut scratch = store.clone();
    scratch.zero_grads();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, &scratch)?;
    let value = g.value(loss).item();
    g.backward(loss, &mut scratch)?;
    let grads = params.iter().map(|&p| scratch.grad(p).clone()).collect();
    Ok((value, grads, g.into_selections()))
}

fn eval_replayed<F>(store: &ParamStore, selections: &Selections, loss_fn: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::replaying(selections.clone());
    let loss = loss_fn(&mut g, store)?;
    Ok(g.value(loss).item())
}

/// Compares backward's gradient against central differences for every entry
/// of every listed parameter.
pub fn finite_diff_check<F>(store: &ParamStore, params: &[ParamId], mut loss_fn: F, step: f64, tol: f64) -> Result<GradReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let (base, grads, selections) = analytic_grads(store, params, &mut loss_fn)?;
    let again = eval_replayed(store, &selections, &mut loss_fn)?;
    let fresh = {
        let mut g = Graph::new();
        let l = loss_fn(&mut g, store)?;
        g.value(l).item()
    };
    if base.to_bits() != again.to_bits() || base.to_bits() != fresh.to_bits() {
        return Err(Error::InvalidArgument(format!(
            "loss function is not deterministic: {base} vs {fresh}"
        )));
    }
    check_against(store, params, loss_fn, &grads, &selections, step, tol)
}

/// Like [`finite_diff_check`] but with caller-supplied analytic gradients.
pub fn check_against<F>(
    store: &ParamStore,
    params: &[ParamId],
    mut loss_fn: F,
    analytic: &[Tensor],
    selections: &Selections,
    step: f64,
    tol: f64,
) -> Result<GradReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::InvalidArgument("one analytic gradient per parameter required".into()));
    }
    let mut probe = store.clone();
    let mut checks = Vec::with_capacity(params.len());
    for (&pid, grad) in params.iter().zip(analytic) {
        let mut worst = (0.0, 0usize, 0.0, 0.0);
        for e in 0..probe.value(pid).len() {
            let orig = probe.value(pid).data()[e];
            probe.get_mut(pid).value.data_mut()[e] = orig + step;
            let plus = eval_replayed(&probe, selections, &mut loss_fn)?;
            probe.get_mut(pid).value.data_mut()[e] = orig - step;
            let minus = eval_replayed(&probe, selections, &mut loss_fn)?;
            probe.get_mut(pid).value.data_mut()[e] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[e];
            let err = relative_error(a, numeric);
            if err > worst.0 || e == 0 {
                worst = (err, e, a, numeric);
            }
        }
        checks.push(ParamCheck {
            name: store.get(pid).name.clone(),
            max_rel_err: worst.0,
            worst_entry: worst.1,
            analytic: worst.2,
            numeric: worst.3,
            passed: worst.0 <= tol,
        });
    }
    Ok(GradReport {
        params: checks,
        tol,
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Parameter;

    fn quadratic(g: &mut Graph, s: &ParamStore) -> Result<Var> {
        let p = g.param(s, ParamId(0));
        let sq = g.mul(p, p)?;
        let w = g.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let weighted = g.mul(sq, w)?;
        g.sum_all(weighted)
    }

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add(Parameter::new("p", Tensor::from_vec(vec![0.3, -1.2, 0.7]), true));
        s.add(Parameter::new("q", Tensor::from_vec(vec![2.0]), true));
        s
    }

    #[test]
    fn quadratic_passes_tight_tolerance() {
        let s = store();
        let report = finite_diff_check(&s, &[ParamId(0)], quadratic, 1e-6, 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn corrupted_gradient_fails_only_that_parameter() {
        let s = store();
        let loss = |g: &mut Graph, s: &ParamStore| -> Result<Var> {
            let a = quadratic(g, s)?;
            let q = g.param(s, ParamId(1));
            let q2 = g.mul(q, q)?;
            let b = g.sum_all(q2)?;
            g.add(a, b)
        };
        let mut f = loss;
        let (_, mut grads, sel) = analytic_grads(&s, &[ParamId(0), ParamId(1)], &mut f).unwrap();
        grads[1].data_mut()[0] += 1.0;
        let report = check_against(&s, &[ParamId(0), ParamId(1)], f, &grads, &sel, 1e-6, 1e-4).unwrap();
        let failed: Vec<_> = report.failures().iter().map(|c| c.name.clone()).collect();
        assert_eq!(failed, vec!["q".to_string()]);
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let s = store();
        let mut calls = 0.0;
        let loss = move |g: &mut Graph, s: &ParamStore| -> Result<Var> {
            calls += 1.0;
            let p = g.param(s, ParamId(0));
            let t = g.sum_all(p)?;
            g.scale(t, calls)
        };
        assert!(finite_diff_check(&s, &[ParamId(0)], loss, 1e-6, 1e-4).is_err());
    }
}
