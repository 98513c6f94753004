use super::matrix::Matrix;
use crate::error::{Error, Result};

/// `p ← p − lr·g` elementwise.
pub fn sgd_step(params: &mut Matrix, grads: &Matrix, lr: f64) -> Result<()> {
    if params.shape() != grads.shape() {
        return Err(Error::shape("sgd_step", params.shape(), grads.shape()));
    }
    grads.ensure_finite("sgd_step gradient")?;
    params.add_scaled(grads, -lr)
}

/// Central-difference gradient `(f(x+εe) − f(x−εe)) / 2ε` for every coordinate of `point`.
pub fn finite_diff_grad<F>(mut f: F, point: &Matrix, eps: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut probe = point.clone();
    let mut out = Matrix::zeros(point.rows(), point.cols());
    for i in 0..point.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + eps;
        let plus = f(&probe);
        probe.as_mut_slice()[i] = orig - eps;
        let minus = f(&probe);
        probe.as_mut_slice()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("finite_diff_grad: f at coordinate {i}")));
        }
        out.as_mut_slice()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, with a tiny floor so two zero vectors compare equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}
