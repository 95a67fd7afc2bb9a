//! Shared test oracles: central finite differences over parameter sets.
//!
//! The differencing here only ever calls forward evaluation, so it stays
//! independent of the reverse-mode implementation it checks.

use std::collections::BTreeMap;

use fbm_lab::autodiff::{ParamSet, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Central finite-difference gradients of `loss_fn` with respect to every
/// element of the named parameters.
pub fn finite_diff_grads(
    params: &ParamSet,
    names: &[String],
    mut loss_fn: impl FnMut(&ParamSet) -> f64,
) -> BTreeMap<String, Tensor> {
    let mut out = BTreeMap::new();
    let mut work = params.clone();
    for name in names {
        let base = params.tensor(name).clone();
        let mut grad = Tensor::zeros(base.rows(), base.cols());
        for i in 0..base.len() {
            let orig = base.data()[i];
            let mut plus = base.clone();
            plus.data_mut()[i] = orig + FD_STEP;
            work.set_tensor(name, plus);
            let up = loss_fn(&work);
            let mut minus = base.clone();
            minus.data_mut()[i] = orig - FD_STEP;
            work.set_tensor(name, minus);
            let down = loss_fn(&work);
            grad.data_mut()[i] = (up - down) / (2.0 * FD_STEP);
        }
        work.set_tensor(name, base);
        out.insert(name.clone(), grad);
    }
    out
}

/// Elementwise relative error with a small-denominator guard.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest elementwise relative error between analytic and numeric gradient
/// maps. Parameters missing from the analytic map count as zeros.
pub fn max_rel_err(
    analytic: &BTreeMap<String, Tensor>,
    numeric: &BTreeMap<String, Tensor>,
) -> f64 {
    let mut worst = 0.0f64;
    for (name, num) in numeric {
        match analytic.get(name) {
            Some(ana) => {
                for (a, n) in ana.data().iter().zip(num.data()) {
                    worst = worst.max(rel_err(*a, *n));
                }
            }
            None => {
                for n in num.data() {
                    worst = worst.max(rel_err(0.0, *n));
                }
            }
        }
    }
    worst
}
