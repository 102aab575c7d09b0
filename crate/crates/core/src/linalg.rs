//! Dense complex linear algebra and the complementary error function.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use thiserror::Error;

pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not Hermitian (asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("matrix is singular or rank deficient")]
    Singular,
    #[error("argument {0} outside the domain")]
    Domain(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// `Σ_k h_k w_k` (no conjugation), the product of a row channel and a column beam.
pub fn dot(h: &CVec, w: &CVec) -> C64 {
    h.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
}

/// `h M h^H` for a row vector `h`.
pub fn quad(h: &CVec, m: &CMat) -> f64 {
    let hc = h.map(|z| z.conj());
    (h.transpose() * m * hc)[(0, 0)].re
}

/// `h^H h` for a row vector `h` (the outer product `F`, `U`).
pub fn row_outer(h: &CVec) -> CMat {
    let hc = h.map(|z| z.conj());
    &hc * h.transpose()
}

/// `v v^H` for a column vector `v`.
pub fn col_outer(v: &CVec) -> CMat {
    v * v.adjoint()
}

pub fn trace_re(m: &CMat) -> f64 {
    m.trace().re
}

pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * real(0.5)
}

/// Largest `|M − M^H|` entry relative to `max(‖M‖_F, 1)`.
pub fn asymmetry(m: &CMat) -> f64 {
    let d = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    d / m.norm().max(1.0)
}

fn check_hermitian(m: &CMat) -> Result<(), LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::Dimension(format!("{}x{} is not square", m.nrows(), m.ncols())));
    }
    let a = asymmetry(m);
    if !(a <= 1e-12) {
        return Err(LinalgError::NotHermitian(a));
    }
    Ok(())
}

/// Eigen-decomposition `M = QΛQ^H` with eigenvalues in descending order.
pub fn hermitian_evd(m: &CMat) -> Result<(Vec<f64>, CMat), LinalgError> {
    check_hermitian(m)?;
    let n = m.nrows();
    let eig = hermitize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let q = CMat::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((vals, q))
}

pub fn min_eig(m: &CMat) -> f64 {
    hermitize(m).symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max_eig(m: &CMat) -> f64 {
    hermitize(m).symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues set to zero.
pub fn psd_project(m: &CMat) -> CMat {
    let eig = hermitize(m).symmetric_eigen();
    let d = eig.eigenvalues.map(|v| real(v.max(0.0)));
    let q = &eig.eigenvectors;
    hermitize(&(q * CMat::from_diagonal(&d) * q.adjoint()))
}

/// `L` with `LL^H = M` after zeroing eigenvalues in `[−tol, 0]`. Columns
/// follow the eigenvalues in descending order, so trailing columns of a
/// rank-deficient input are zero.
pub fn psd_factor(m: &CMat, tol: f64) -> Result<CMat, LinalgError> {
    let (vals, q) = hermitian_evd(m)?;
    let lo = vals.last().copied().unwrap_or(0.0);
    if lo < -tol {
        return Err(LinalgError::NotPsd(lo));
    }
    let mut l = q;
    for (j, v) in vals.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    Ok(l)
}

/// Right pseudo-inverse `X^H (XX^H)^{-1}` of a full-row-rank matrix.
pub fn pseudo_inverse(x: &CMat) -> Result<CMat, LinalgError> {
    if x.nrows() > x.ncols() {
        return Err(LinalgError::Dimension(format!("{} rows exceed {} columns", x.nrows(), x.ncols())));
    }
    let gram = hermitize(&(x * x.adjoint()));
    let inv = hpd_inverse(&gram)?;
    Ok(x.adjoint() * inv)
}

/// Inverse of a Hermitian positive-definite matrix; rejects numerically
/// singular input (condition number above ~1e13).
pub fn hpd_inverse(m: &CMat) -> Result<CMat, LinalgError> {
    let vals = hermitize(m).symmetric_eigenvalues();
    let hi = vals.iter().copied().fold(0.0, f64::max);
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if !(hi > 0.0) || lo <= 1e-13 * hi {
        return Err(LinalgError::Singular);
    }
    let ch = hermitize(m).cholesky().ok_or(LinalgError::Singular)?;
    Ok(hermitize(&ch.inverse()))
}

/// Complementary error function (relative error of a few ulp).
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Inverse of [`erfc`] on `(0, 2)`, polished by one Newton step.
pub fn erfc_inv(y: f64) -> Result<f64, LinalgError> {
    if !(y > 0.0 && y < 2.0) {
        return Err(LinalgError::Domain(y));
    }
    if y == 1.0 {
        return Ok(0.0);
    }
    let mut x = statrs::function::erf::erfc_inv(y);
    let d = -2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp();
    if d != 0.0 && x.is_finite() {
        x -= (erfc(x) - y) / d;
    }
    Ok(x)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}
