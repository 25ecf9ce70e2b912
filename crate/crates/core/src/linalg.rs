//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot size below which a triangular factor is treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

pub fn select_rows_cols(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

pub fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

/// Solves `a x = b` for symmetric positive definite `a`.
///
/// When the plain Cholesky factorization fails, a ridge `mu * I` is added with
/// `mu` growing from `1e-12 * scale` up to `1e-4 * scale`.
pub fn solve_spd_jittered(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let scale = a.diagonal().abs().max().max(1.0);
    let mut mu = 1e-12 * scale;
    while mu <= 1e-4 * scale {
        let shifted = a + DMatrix::identity(a.nrows(), a.ncols()) * mu;
        if let Some(chol) = shifted.cholesky() {
            return Ok(chol.solve(b));
        }
        mu *= 10.0;
    }
    Err(Error::Singular(format!(
        "{}x{} system is not positive definite even after ridge jitter",
        a.nrows(),
        a.ncols()
    )))
}

pub fn inverse_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| {
        Error::Singular(format!("{}x{} matrix is not positive definite", a.nrows(), a.ncols()))
    })
}

/// General square inverse by LU, with a conditioning check on the pivots.
pub fn inverse_general(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = a.clone().lu();
    let u = lu.u();
    let max = u.diagonal().abs().max();
    let min = u.diagonal().abs().min();
    if !(max > 0.0) || min <= RANK_TOL * max {
        return Err(Error::Singular(format!("{}x{} matrix", a.nrows(), a.ncols())));
    }
    lu.try_inverse()
        .ok_or_else(|| Error::Singular(format!("{}x{} matrix", a.nrows(), a.ncols())))
}

/// Ordinary least squares by Householder QR. Returns coefficients and the
/// residual sum of squares.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("design has {n} rows, response has {}", y.len())));
    }
    if d == 0 {
        return Ok((DVector::zeros(0), y.norm_squared()));
    }
    if n < d {
        return Err(Error::Singular(format!("{n} observations for {d} columns")));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let max = r.diagonal().abs().max();
    if !(max > 0.0) || r.diagonal().abs().min() <= RANK_TOL * max {
        return Err(Error::Singular("design matrix is rank deficient".into()));
    }
    let qty = qr.q().transpose() * y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let resid = y - x * &coef;
    Ok((coef, resid.norm_squared()))
}

/// Eigenvalues of a symmetric matrix, largest first.
pub fn sym_eigenvalues_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

/// `m^{-1/2}` for a symmetric positive definite matrix.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    if eig.eigenvalues.iter().any(|&v| v <= RANK_TOL * max.max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular("matrix is not positive definite".into()));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

pub fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

pub fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(m);
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - means[j])
}

/// Sample covariance of the columns with divisor `n`.
pub fn covariance_n(m: &DMatrix<f64>) -> DMatrix<f64> {
    let c = center_columns(m);
    let n = m.nrows().max(1) as f64;
    (c.transpose() * &c) / n
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
