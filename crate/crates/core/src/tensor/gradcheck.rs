//! Central finite-difference verification of reverse-mode gradients.

use super::{Graph, Tensor, Var};
use crate::error::{config_err, Error, Result};

#[derive(Clone, Debug)]
pub struct FiniteDiffReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compare the gradient of the scalar `f(input)` against central differences
/// at every coordinate of `input`.
pub fn finite_diff_check<F>(f: F, input: &Tensor<f64>, eps: f64) -> Result<FiniteDiffReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..input.len()).collect();
    finite_diff_check_at(f, input, eps, &coords)
}

/// As [`finite_diff_check`], restricted to the listed flat coordinates.
pub fn finite_diff_check_at<F>(
    f: F,
    input: &Tensor<f64>,
    eps: f64,
    coords: &[usize],
) -> Result<FiniteDiffReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return config_err(format!("finite-difference step must be positive, got {eps}"));
    }
    let eval = |t: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.input(t);
        let y = f(&mut g, x)?;
        scalar_of(&g, y)
    };
    let mut g = Graph::new();
    let x = g.param(input.clone());
    let y = f(&mut g, x)?;
    scalar_of(&g, y)?;
    g.backward(y)?;
    let analytic = g
        .grad(x)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![0.0; input.len()]);

    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for &i in coords {
        let mut plus = input.clone();
        plus.data_mut()[i] += eps;
        let mut minus = input.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel >= report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

fn scalar_of(g: &Graph<f64>, y: Var) -> Result<f64> {
    let v = g.value(y);
    if v.len() != 1 {
        return Err(Error::Usage(format!(
            "finite-difference target must be scalar, got {}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}
