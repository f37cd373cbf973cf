//! Finite-difference gradient verification.

use crate::error::Result;
use crate::numerics::params::{GradMap, ParamSet};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub entries_checked: usize,
}

/// Compare `analytic` against central finite differences of `f` for every
/// entry of every parameter. `f` must be a pure function of the parameter
/// values. Relative error uses `max(|a|, |fd|, 1)` as the denominator.
pub fn check_gradients(
    params: &mut ParamSet,
    analytic: &GradMap,
    h: f64,
    mut f: impl FnMut(&ParamSet) -> Result<f64>,
) -> Result<GradCheckReport> {
    let names: Vec<String> = params.names().iter().map(|s| s.to_string()).collect();
    let mut max_rel_err = 0.0;
    let mut worst_param = String::new();
    let mut entries_checked = 0;
    for name in &names {
        let len = params.value(name)?.data.len();
        for i in 0..len {
            let orig = params.value(name)?.data[i];
            params.value_mut(name)?.data[i] = orig + h;
            let fp = f(params)?;
            params.value_mut(name)?.data[i] = orig - h;
            let fm = f(params)?;
            params.value_mut(name)?.data[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let a = analytic.get(name).map_or(0.0, |g| g.data[i]);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
            if rel > max_rel_err {
                max_rel_err = rel;
                worst_param = format!("{name}[{i}]");
            }
            entries_checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst_param,
        entries_checked,
    })
}
