use super::params::{Gradients, ParamStore};
use crate::error::{ensure, Error, Result};

/// Relative error denominators never drop below this, so coordinates whose
/// true gradient is zero are judged on absolute error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub flagged: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.flagged == 0)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients against central differences
/// `(f(x+h) - f(x-h)) / 2h` for every scalar parameter.
///
/// `loss` returns the loss value and its analytic gradients at the given
/// parameters. It must be deterministic: the base point is evaluated twice
/// and any difference is a contract violation.
pub fn finite_diff_check<F>(params: &ParamStore, h: f64, tol: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, Gradients)>,
{
    ensure!((1e-6..=1e-3).contains(&h), "step h={h} outside [1e-6, 1e-3]");
    let (f0, analytic) = loss(params)?;
    let (f0_again, _) = loss(params)?;
    if f0.to_bits() != f0_again.to_bits() {
        return Err(Error::contract(format!(
            "loss function is nondeterministic: {f0} vs {f0_again}"
        )));
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        tol,
        params: Vec::new(),
    };
    for id in params.ids() {
        let n = params.value(id).len();
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            max_rel_error: 0.0,
            worst_index: 0,
            flagged: 0,
        };
        for i in 0..n {
            let orig = params.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + h;
            let (fp, _) = loss(&work)?;
            work.value_mut(id).data_mut()[i] = orig - h;
            let (fm, _) = loss(&work)?;
            work.value_mut(id).data_mut()[i] = orig;

            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.get(id).map_or(0.0, |t| t.data()[i]);
            let err = relative_error(a, numeric);
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = i;
            }
            if err > tol {
                check.flagged += 1;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
