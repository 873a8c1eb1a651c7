use serde::Serialize;

use super::{Tape, Tensor, TensorError, Var};
use crate::scalar::Scalar;

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (parameter index, element index) of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn evaluate<T, F, E>(f: &mut F, params: &[Tensor<T>], track: bool) -> Result<(Tape<T>, Vec<Var>, Var), E>
where
    T: Scalar,
    F: FnMut(&mut Tape<T>, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| {
            if track {
                tape.param(p.clone())
            } else {
                tape.constant(p.clone())
            }
        })
        .collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(TensorError::NotScalar(value.shape().to_vec()).into());
    }
    if !value.item().is_finite() {
        return Err(TensorError::NonFinite("grad_check objective".into()).into());
    }
    Ok((tape, vars, out))
}

/// Checks every parameter entry of the scalar function `f` against
/// central differences with step `epsilon`.
pub fn grad_check<T, F, E>(
    params: &[Tensor<T>],
    mut f: F,
    epsilon: T,
    tolerance: f64,
) -> Result<GradCheckReport, E>
where
    T: Scalar,
    F: FnMut(&mut Tape<T>, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let (tape, vars, out) = evaluate(&mut f, params, true)?;
    let grads = tape.backward(out)?;

    let mut probe: Vec<Tensor<T>> = params.to_vec();
    let mut max_err = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    let two_eps = (epsilon + epsilon).to_f64_lossless();

    for (p, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for k in 0..params[p].len() {
            let orig = params[p].data()[k];
            probe[p].data_mut()[k] = orig + epsilon;
            let plus = {
                let (t, _, o) = evaluate(&mut f, &probe, false)?;
                t.value(o).item().to_f64_lossless()
            };
            probe[p].data_mut()[k] = orig - epsilon;
            let minus = {
                let (t, _, o) = evaluate(&mut f, &probe, false)?;
                t.value(o).item().to_f64_lossless()
            };
            probe[p].data_mut()[k] = orig;

            let numeric = (plus - minus) / two_eps;
            let a = analytic.map_or(0.0, |g| g.data()[k].to_f64_lossless());
            if !a.is_finite() || !numeric.is_finite() {
                return Err(TensorError::NonFinite(format!("gradient of parameter {p}")).into());
            }
            let err = relative_error(a, numeric);
            if err > max_err || worst.is_none() {
                max_err = max_err.max(err);
                worst = Some((p, k));
            }
            checked += 1;
        }
    }

    Ok(GradCheckReport {
        max_relative_error: max_err,
        worst,
        checked,
        tolerance,
        passed: max_err < tolerance,
    })
}
