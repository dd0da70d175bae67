//! Central finite-difference verification of tape gradients.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|)` over all checked entries.
    pub max_rel_error: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub checked_entries: usize,
}

/// Compares backward-mode gradients of `f` against central differences with
/// step `eps`. `params` is never modified.
pub fn grad_check<F>(f: F, params: &ParamStore, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    grad_check_only(f, params, eps, None)
}

/// As [`grad_check`], restricted to the listed parameter names when `only` is set.
pub fn grad_check_only<F>(
    f: F,
    params: &ParamStore,
    eps: f64,
    only: Option<&[&str]>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::Contract(alloc::format!("grad_check step {eps} outside (0, 1e-3]")));
    }
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    let analytic = tape.backward(loss)?;

    let eval = |p: &ParamStore, name: &str| -> Result<f64> {
        let mut tape = Tape::new();
        let v = f(&mut tape, p)?;
        let value = tape.value(v).item();
        if !value.is_finite() {
            return Err(Error::Numerical {
                param: name.to_string(),
                detail: alloc::format!("objective is {value} at a perturbed point"),
            });
        }
        Ok(value)
    };

    let names: Vec<String> = params
        .names()
        .filter(|n| only.is_none_or(|list| list.contains(n)))
        .map(ToString::to_string)
        .collect();
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked_entries: 0,
    };
    for name in &names {
        let len = params.get(name)?.len();
        for i in 0..len {
            let orig = params.get(name)?.values()[i];
            work.get_mut(name)?.values_mut()[i] = orig + eps;
            let plus = eval(&work, name)?;
            work.get_mut(name)?.values_mut()[i] = orig - eps;
            let minus = eval(&work, name)?;
            work.get_mut(name)?.values_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(name).map_or(0.0, |g| g.values()[i]);
            let err = libm::fabs(a - numeric) / f64::max(1.0, libm::fabs(a));
            report.checked_entries += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = f64::max(report.max_rel_error, err);
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
