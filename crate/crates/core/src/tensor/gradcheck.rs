//! Central-difference gradient checks.

use super::param::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::Result;

const STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so entries whose true gradient
/// is ~0 are judged on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Relative error per checked element.
    pub errors: Vec<f64>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Labels of elements above tolerance (`name[index]`).
    pub failures: Vec<String>,
}

impl GradCheckReport {
    fn from_pairs(pairs: Vec<(String, f64, f64)>, tolerance: f64) -> Self {
        let mut errors = Vec::with_capacity(pairs.len());
        let mut failures = Vec::new();
        for (label, analytic, numeric) in pairs {
            let e = relative_error(analytic, numeric);
            if e > tolerance {
                failures.push(format!("{label}: analytic {analytic:e} numeric {numeric:e}"));
            }
            errors.push(e);
        }
        let max_rel_error = errors.iter().copied().fold(0.0, f64::max);
        Self { passed: failures.is_empty(), errors, max_rel_error, tolerance, failures }
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of a scalar function of `input` against
/// central differences at every element.
pub fn finite_difference_check<F>(f: F, input: &Tensor, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let out = f(&mut tape, x)?;
    let grads = tape.backward(out)?;
    let analytic = grads.wrt(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.len()]);

    let eval = |t: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(t);
        let out = f(&mut tape, x)?;
        Ok(tape.value(out).item())
    };
    let mut pairs = Vec::with_capacity(input.len());
    for i in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += STEP;
        let mut minus = input.clone();
        minus.data_mut()[i] -= STEP;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * STEP);
        pairs.push((format!("input[{i}]"), analytic[i], numeric));
    }
    Ok(GradCheckReport::from_pairs(pairs, tolerance))
}

/// Same check against selected elements of stored parameters. `f` builds
/// the scalar loss from the store.
pub fn param_gradient_check<F>(
    store: &ParamStore,
    elements: &[(ParamId, usize)],
    f: F,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let grads = tape.backward(out)?;
    let bound: std::collections::HashMap<ParamId, Var> = tape.bound_params().collect();

    let mut work = store.clone();
    let mut pairs = Vec::with_capacity(elements.len());
    for &(pid, i) in elements {
        let analytic = bound
            .get(&pid)
            .and_then(|v| grads.wrt(*v))
            .map_or(0.0, |g| g[i]);
        let orig = work.get(pid).tensor.data()[i];
        let mut eval = |delta: f64| -> Result<f64> {
            work.get_mut(pid).tensor.data_mut()[i] = orig + delta;
            let mut tape = Tape::new();
            let out = f(&mut tape, &work)?;
            Ok(tape.value(out).item())
        };
        let numeric = (eval(STEP)? - eval(-STEP)?) / (2.0 * STEP);
        work.get_mut(pid).tensor.data_mut()[i] = orig;
        pairs.push((format!("{}[{i}]", store.get(pid).name), analytic, numeric));
    }
    Ok(GradCheckReport::from_pairs(pairs, tolerance))
}
