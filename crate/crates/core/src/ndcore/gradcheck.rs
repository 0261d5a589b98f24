//! Central finite-difference check of tape gradients.

use std::fmt;

use super::{NdError, ParamSet, Tape, Var};

/// Magnitudes below this are compared absolutely rather than relatively.
/// Central differences at step 1e-5 carry roughly 1e-10 of rounding noise
/// on an O(1) loss, which would otherwise dominate gradients that are
/// exactly zero (a bias feeding a training-mode batchnorm, for one).
pub const REL_ERR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose ±step evaluations land on a different ReLU/max
    /// piece than the base point; excluded from `max_rel_err`.
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }

    pub fn flagged(&self) -> usize {
        self.params.iter().map(|p| p.flagged).sum()
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(f, "param={} max_rel_err={:.3e} checked={} flagged={}", p.name, p.max_rel_err, p.checked, p.flagged)?;
        }
        write!(f, "max_rel_err={:.3e} tolerance={:.1e} status={}", self.max_rel_err(), self.tolerance, if self.passed() { "pass" } else { "fail" })
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn evaluate<F>(params: &ParamSet, loss_fn: &F) -> Result<(Tape, Vec<Var>, Var), NdError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NdError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.tensors().iter().map(|t| tape.param(t.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    Ok((tape, vars, loss))
}

/// Compares tape gradients of `loss_fn` against central differences with the
/// given `step`, parameter by parameter. `loss_fn` must be deterministic
/// (reseed any dropout stream inside it).
pub fn gradcheck<F>(params: &ParamSet, loss_fn: F, step: f64, tolerance: f64) -> Result<GradcheckReport, NdError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NdError>,
{
    let (tape, vars, loss) = evaluate(params, &loss_fn)?;
    let base_sig = tape.kink_signature();
    let grads = tape.backward(loss)?;
    drop(tape);

    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for (pi, name) in params.names().iter().enumerate() {
        let analytic = grads.get(vars[pi]).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; params.get(pi).len()]);
        let mut check = ParamCheck { name: name.clone(), max_rel_err: 0.0, checked: 0, flagged: 0 };
        for k in 0..params.get(pi).len() {
            let orig = params.get(pi).data()[k];
            work.get_mut(pi).data_mut()[k] = orig + step;
            let (tp, _, lp) = evaluate(&work, &loss_fn)?;
            work.get_mut(pi).data_mut()[k] = orig - step;
            let (tm, _, lm) = evaluate(&work, &loss_fn)?;
            work.get_mut(pi).data_mut()[k] = orig;
            if tp.kink_signature() != base_sig || tm.kink_signature() != base_sig {
                check.flagged += 1;
                continue;
            }
            let numeric = (tp.value(lp).data()[0] - tm.value(lm).data()[0]) / (2.0 * step);
            check.max_rel_err = check.max_rel_err.max(rel_err(analytic[k], numeric));
            check.checked += 1;
        }
        out.push(check);
    }
    Ok(GradcheckReport { params: out, tolerance })
}
