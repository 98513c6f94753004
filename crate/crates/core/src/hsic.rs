//! Hilbert-Schmidt independence criterion between the two modalities'
//! individuality codes:
//!
//! ```text
//! HSIC(Px, Py) = (n−1)^(−2) · tr(Kx·A·Ky·A),   K_ab = exp(−‖p_a − p_b‖² / σ),   A = I − eeᵀ/n
//! ```
//!
//! Codes are `k × n` (one sample per column).

use crate::diffkernel::{pairwise_sq_dists_cols, Matrix};
use crate::error::{Error, Result};

const BANDWIDTH_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    pub k: Matrix,
    pub sigma: f64,
}

/// Materialized centering matrix `I − eeᵀ/n`.
pub fn centering_matrix(n: usize) -> Matrix {
    let inv = 1.0 / n as f64;
    Matrix::from_fn(n, n, |i, j| if i == j { 1.0 - inv } else { -inv })
}

/// `A·K·A` without materializing `A`.
pub fn center(k: &Matrix) -> Matrix {
    let n = k.rows();
    let row_means: Vec<f64> = k.row_sums().into_iter().map(|s| s / n as f64).collect();
    let col_means: Vec<f64> = k.col_sums().into_iter().map(|s| s / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    Matrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// Mean squared distance between distinct columns, floored.
pub fn mean_sq_distance_bandwidth(codes: &Matrix) -> f64 {
    let n = codes.cols();
    if n < 2 {
        return BANDWIDTH_FLOOR;
    }
    let d = pairwise_sq_dists_cols(codes);
    (d.sum() / (n * (n - 1)) as f64).max(BANDWIDTH_FLOOR)
}

pub fn rbf_kernel(codes: &Matrix, sigma: f64) -> Result<KernelMatrix> {
    if codes.cols() < 2 {
        return Err(Error::invalid("rbf_kernel needs at least 2 samples"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("kernel bandwidth must be positive, got {sigma}")));
    }
    let k = pairwise_sq_dists_cols(codes).map(|d| (-d / sigma).exp());
    Ok(KernelMatrix { k, sigma })
}

pub fn hsic_value(kx: &Matrix, ky: &Matrix) -> Result<f64> {
    let n = kx.rows();
    if n < 2 {
        return Err(Error::invalid("HSIC needs at least 2 samples"));
    }
    if kx.shape() != (n, n) || ky.shape() != (n, n) {
        return Err(Error::shape("hsic_value", (n, n), ky.shape()));
    }
    // tr(Kx·(A·Ky·A)) with both factors symmetric.
    let cy = center(ky);
    let t: f64 = kx.as_slice().iter().zip(cy.as_slice()).map(|(a, b)| a * b).sum();
    Ok(t / ((n - 1) * (n - 1)) as f64)
}

/// HSIC with each side's bandwidth taken from [`mean_sq_distance_bandwidth`].
pub fn hsic_of_codes(px: &Matrix, py: &Matrix) -> Result<f64> {
    let kx = rbf_kernel(px, mean_sq_distance_bandwidth(px))?;
    let ky = rbf_kernel(py, mean_sq_distance_bandwidth(py))?;
    hsic_value(&kx.k, &ky.k)
}

#[derive(Clone, Debug)]
pub struct HsicGrad {
    pub value: f64,
    pub grad_x: Matrix,
    pub grad_y: Matrix,
    pub sigma_x: f64,
    pub sigma_y: f64,
}

/// HSIC value and its gradient w.r.t. both code matrices, holding the given
/// bandwidths constant.
pub fn hsic_grad_with_bandwidth(px: &Matrix, py: &Matrix, sigma_x: f64, sigma_y: f64) -> Result<HsicGrad> {
    if px.cols() != py.cols() {
        return Err(Error::shape("hsic_grad", (px.rows(), py.cols()), px.shape()));
    }
    let n = px.cols();
    let kx = rbf_kernel(px, sigma_x)?;
    let ky = rbf_kernel(py, sigma_y)?;
    let cx = center(&kx.k);
    let cy = center(&ky.k);
    let norm = 1.0 / ((n - 1) * (n - 1)) as f64;
    let value = kx.k.as_slice().iter().zip(cy.as_slice()).map(|(a, b)| a * b).sum::<f64>() * norm;

    let grad_side = |p: &Matrix, k: &Matrix, other_centered: &Matrix, sigma: f64| -> Result<Matrix> {
        // ∂J/∂K = norm·(A K' A); ∂K_ab/∂p_a = −(2/σ) K_ab (p_a − p_b); both (a,b) and (b,a) count.
        let w = k.hadamard(other_centered)?.scale(norm);
        let wsum = w.row_sums();
        let pw = p.matmul(&w)?;
        let scale = -4.0 / sigma;
        Ok(Matrix::from_fn(p.rows(), n, |r, a| scale * (p[(r, a)] * wsum[a] - pw[(r, a)])))
    };
    let grad_x = grad_side(px, &kx.k, &cy, sigma_x)?;
    let grad_y = grad_side(py, &ky.k, &cx, sigma_y)?;
    Ok(HsicGrad {
        value,
        grad_x,
        grad_y,
        sigma_x,
        sigma_y,
    })
}

/// HSIC gradient with batch-derived bandwidths (treated as constants).
pub fn hsic_grad(px: &Matrix, py: &Matrix) -> Result<HsicGrad> {
    hsic_grad_with_bandwidth(px, py, mean_sq_distance_bandwidth(px), mean_sq_distance_bandwidth(py))
}
