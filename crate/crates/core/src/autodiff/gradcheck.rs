//! Central finite-difference checks against tape gradients.
//!
//! Used by the unit and acceptance tests; the numerical side never touches
//! the backward pass.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Denominator floor for the relative error of near-zero derivatives.
pub const REL_FLOOR: f64 = 1e-6;

/// A two-ulp change of `f` moves the difference quotient by `2ε|f|/h`;
/// derivatives below `1e5` times that are not resolved to 1e-5 relative
/// accuracy and are compared against it as a floor.
const RESOLVE: f64 = 2e5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub entries_checked: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_floor(analytic, numeric, REL_FLOOR)
}

fn rel_err_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares tape gradients of the scalar built by `build` against central
/// differences with step `h`, over at most `per_param` entries of every
/// parameter whose name starts with one of `prefixes` (all when empty).
pub fn check_params<F>(
    store: &mut ParamStore,
    build: F,
    h: f64,
    per_param: usize,
    prefixes: &[&str],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    tape.backward(loss, store)?;
    let floor = REL_FLOOR.max(RESOLVE * f64::EPSILON * tape.value(loss).item().abs() / h);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let v = build(&mut t, s)?;
        Ok(t.value(v).item())
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        entries_checked: 0,
    };
    let names: Vec<String> = store
        .iter()
        .map(|p| p.name.clone())
        .filter(|n| prefixes.is_empty() || prefixes.iter().any(|p| n.starts_with(p)))
        .collect();
    for name in names {
        let id = store.id(&name).unwrap();
        let n = store.get(id).value.len();
        let stride = (n / per_param.max(1)).max(1);
        for i in (0..n).step_by(stride).take(per_param) {
            let analytic = store.get(id).grad.data()[i];
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + h;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - h;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_err_floor(analytic, numeric, floor);
            report.entries_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = format!("{name}[{i}] analytic {analytic:e} numeric {numeric:e}");
            }
        }
    }
    store.zero_grads();
    Ok(report)
}
