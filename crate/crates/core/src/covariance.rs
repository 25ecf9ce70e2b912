//! Covariance estimation through sequential penalized regressions (modified
//! Cholesky decomposition) and through a linear factor model.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::likelihoods::{Dataset, GlmFamily, GlmObjective};
use crate::linalg::{
    center_columns, covariance_n, inv_sqrt_spd, inverse_general, least_squares, select_columns, sym_eigenvalues_desc,
};
use crate::lqa::{self, LqaConfig};
use crate::penalty::{PenaltyKind, PenaltySpec};
use crate::tuning::{gcv_select, TuneOptions};

/// Sequential-regression representation `LΣLᵀ = D`, with `L = I − Φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyCov {
    /// Strictly lower triangular; row `t` holds the regression of variable `t`
    /// on variables `0..t`.
    pub phi: DMatrix<f64>,
    pub d_diag: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    /// Column order used for the sequential regressions.
    pub order: Vec<usize>,
    /// Penalty level of each row (`NaN` for the first row).
    pub row_lambda: Vec<f64>,
}

impl CholeskyCov {
    /// Assembles `Σ = L⁻¹ D L⁻ᵀ` and `Σ⁻¹ = Lᵀ D⁻¹ L` from `Φ` and `D`.
    pub fn from_parts(phi: DMatrix<f64>, d_diag: DVector<f64>) -> Result<Self> {
        let d = d_diag.len();
        if phi.shape() != (d, d) {
            return Err(Error::Dimension(format!("phi is {:?}, expected {d}x{d}", phi.shape())));
        }
        if let Some(v) = d_diag.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::InvalidInput(format!("innovation variances must be positive, got {v}")));
        }
        let l = unit_lower(&phi);
        let l_inv = l
            .clone()
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .ok_or_else(|| Error::Singular("unit lower triangular factor".into()))?;
        let dm = DMatrix::from_diagonal(&d_diag);
        let sigma = &l_inv * dm * l_inv.transpose();
        let d_inv = DMatrix::from_diagonal(&d_diag.map(|v| 1.0 / v));
        let precision = l.transpose() * d_inv * &l;
        Ok(CholeskyCov {
            phi,
            d_diag,
            sigma,
            precision,
            order: (0..d).collect(),
            row_lambda: vec![f64::NAN; d],
        })
    }

    pub fn l(&self) -> DMatrix<f64> {
        unit_lower(&self.phi)
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "order": self.order,
            "phi": rows(&self.phi),
            "d_diag": self.d_diag.as_slice(),
            "row_lambda": self.row_lambda.iter().map(|v| if v.is_finite() { json!(v) } else { serde_json::Value::Null }).collect::<Vec<_>>(),
            "sigma": rows(&self.sigma),
            "precision": rows(&self.precision),
        })
    }
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn unit_lower(phi: &DMatrix<f64>) -> DMatrix<f64> {
    let d = phi.nrows();
    DMatrix::from_fn(d, d, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Greater => -phi[(i, j)],
        std::cmp::Ordering::Less => 0.0,
    })
}

/// How each row regression chooses its penalty level.
#[derive(Debug, Clone, PartialEq)]
pub enum RowTuning {
    /// Per-row GCV with coefficient-standard-error scaling.
    Gcv(TuneOptions),
    /// The same λ on every coefficient of every row, unscaled.
    Fixed { lambda: f64, lqa: LqaConfig },
}

/// Penalized modified-Cholesky estimate from an `n × d` sample matrix.
pub fn cholesky_select(w: &DMatrix<f64>, kind: PenaltyKind, tuning: &RowTuning) -> Result<CholeskyCov> {
    let (n, d) = w.shape();
    if n < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 observations, got {n}")));
    }
    if d == 0 {
        return Err(Error::InvalidInput("sample matrix has no columns".into()));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("sample matrix contains NaN or infinite values".into()));
    }
    kind.validate()?;
    let wc = center_columns(w);
    let nf = n as f64;
    let first_var = wc.column(0).norm_squared() / nf;

    let fitted: Vec<(DVector<f64>, f64, f64)> = (1..d)
        .into_par_iter()
        .map(|t| row_fit(&wc, t, kind, tuning).map_err(|e| Error::Row { row: t, source: Box::new(e) }))
        .collect::<Result<_>>()?;

    let mut phi = DMatrix::zeros(d, d);
    let mut d_diag = DVector::zeros(d);
    let mut row_lambda = vec![f64::NAN; d];
    d_diag[0] = first_var;
    for (k, (coef, rss, lambda)) in fitted.into_iter().enumerate() {
        let t = k + 1;
        for j in 0..t {
            phi[(t, j)] = coef[j];
        }
        d_diag[t] = rss / nf;
        row_lambda[t] = lambda;
    }
    if let Some((t, _)) = d_diag.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::Row {
            row: t,
            source: Box::new(Error::Singular("zero residual variance".into())),
        });
    }
    let mut out = CholeskyCov::from_parts(phi, d_diag)?;
    out.row_lambda = row_lambda;
    Ok(out)
}

fn row_fit(wc: &DMatrix<f64>, t: usize, kind: PenaltyKind, tuning: &RowTuning) -> Result<(DVector<f64>, f64, f64)> {
    let prev: Vec<usize> = (0..t).collect();
    let x = select_columns(wc, &prev);
    let y = wc.column(t).into_owned();
    // Surfaces rank deficiency before the penalized fit.
    least_squares(&x, &y)?;
    let lik = GlmObjective::new(GlmFamily::Gaussian, Dataset::new(x.clone(), y.clone())?)?;
    let (beta, lambda) = match tuning {
        RowTuning::Gcv(options) => {
            let r = gcv_select(&lik, kind, options)?;
            (r.fit_at_chosen.beta, r.chosen_lambda)
        }
        RowTuning::Fixed { lambda, lqa } => {
            let pen = vec![PenaltySpec::new(kind, *lambda)?; t];
            (lqa::fit(&lik, &pen, lqa)?.beta, *lambda)
        }
    };
    let rss = (y - x * &beta).norm_squared();
    Ok((beta, rss, lambda))
}

/// `Σ = B cov_f Bᵀ + Σ₀` with diagonal `Σ₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorCov {
    pub loadings: DMatrix<f64>,
    pub cov_f: DMatrix<f64>,
    pub sigma0: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl FactorCov {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "loadings": rows(&self.loadings),
            "cov_f": rows(&self.cov_f),
            "sigma0": self.sigma0.as_slice(),
            "sigma": rows(&self.sigma),
        })
    }
}

/// Per-asset least squares of `Y` on `[1, F]`.
///
/// Idiosyncratic variances use the `n − K − 1` divisor; `cov_f` uses `n`.
pub fn factor_cov(y: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<FactorCov> {
    let (n, d) = y.shape();
    let k = f.ncols();
    if f.nrows() != n {
        return Err(Error::Dimension(format!("returns have {n} rows, factors have {}", f.nrows())));
    }
    if k == 0 || d == 0 {
        return Err(Error::InvalidInput("need at least one asset and one factor".into()));
    }
    if n <= k + 1 {
        return Err(Error::InvalidInput(format!("need n > K + 1, got n = {n}, K = {k}")));
    }
    if y.iter().chain(f.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("returns or factors contain NaN or infinite values".into()));
    }
    let design = DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { f[(i, j - 1)] });
    let qr = design.clone().qr();
    let r = qr.r();
    let max = r.diagonal().abs().max();
    if !(max > 0.0) || r.diagonal().abs().min() <= 1e-10 * max {
        return Err(Error::Singular("factor matrix (with intercept) is rank deficient".into()));
    }
    let fits: Vec<(DVector<f64>, f64)> = (0..d)
        .into_par_iter()
        .map(|i| least_squares(&design, &y.column(i).into_owned()))
        .collect::<Result<_>>()?;
    let mut loadings = DMatrix::zeros(d, k);
    let mut sigma0 = DVector::zeros(d);
    let dof = (n - k - 1) as f64;
    for (i, (coef, rss)) in fits.into_iter().enumerate() {
        for j in 0..k {
            loadings[(i, j)] = coef[j + 1];
        }
        sigma0[i] = rss / dof;
    }
    let cov_f = covariance_n(f);
    let mut sigma = &loadings * &cov_f * loadings.transpose();
    for i in 0..d {
        sigma[(i, i)] += sigma0[i];
    }
    crate::linalg::symmetrize(&mut sigma);
    Ok(FactorCov {
        loadings,
        cov_f,
        sigma0,
        sigma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorErrors {
    /// `max_k |λ_k(Σ̂) − λ_k(Σ)|`.
    pub max_eigen_deviation: f64,
    /// `|ξᵀΣ̂ξ − ξᵀΣξ|`.
    pub portfolio_risk_error: f64,
    /// `tr[(Σ^{-1/2} Σ̂ Σ^{-1/2} − I)²] / d`.
    pub precision_error: f64,
    /// `‖Σ̂⁻¹ − Σ⁻¹‖_F`, absent when `Σ̂` is singular.
    pub inverse_frobenius_error: Option<f64>,
}

fn check_symmetric(m: &DMatrix<f64>, what: &str, d: usize) -> Result<()> {
    if m.shape() != (d, d) {
        return Err(Error::Dimension(format!("{what} is {:?}, expected {d}x{d}", m.shape())));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return Err(Error::InvalidInput(format!("{what} is not symmetric")));
    }
    Ok(())
}

/// Error metrics of each estimate against the true covariance.
pub fn compare_estimators(sigma_true: &DMatrix<f64>, estimates: &[DMatrix<f64>], xi: &DVector<f64>) -> Result<Vec<EstimatorErrors>> {
    let d = sigma_true.nrows();
    check_symmetric(sigma_true, "true covariance", d)?;
    if xi.len() != d {
        return Err(Error::Dimension(format!("weights have length {}, expected {d}", xi.len())));
    }
    if (xi.sum() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("portfolio weights must sum to 1, got {}", xi.sum())));
    }
    let true_eigs = sym_eigenvalues_desc(sigma_true);
    if true_eigs.last().is_some_and(|&v| v < -1e-10 * true_eigs[0].abs().max(1.0)) {
        return Err(Error::InvalidInput("true covariance is not positive semidefinite".into()));
    }
    let root_inv = inv_sqrt_spd(sigma_true)
        .map_err(|_| Error::Singular("true covariance must be positive definite for the normalized errors".into()))?;
    let true_inv = &root_inv * &root_inv;
    let true_risk = (xi.transpose() * sigma_true * xi)[(0, 0)];
    let identity = DMatrix::<f64>::identity(d, d);
    estimates
        .iter()
        .enumerate()
        .map(|(k, est)| {
            check_symmetric(est, &format!("estimate {k}"), d)?;
            let eigs = sym_eigenvalues_desc(est);
            let max_eigen_deviation = eigs.iter().zip(&true_eigs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let risk = (xi.transpose() * est * xi)[(0, 0)];
            let rel = &root_inv * est * &root_inv - &identity;
            let precision_error = (&rel * &rel).trace() / d as f64;
            let inverse_frobenius_error = inverse_general(est).ok().map(|inv| (inv - &true_inv).norm());
            Ok(EstimatorErrors {
                max_eigen_deviation,
                portfolio_risk_error: (risk - true_risk).abs(),
                precision_error,
                inverse_frobenius_error,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        rng.sample(StandardNormal)
    }

    fn fixed(lambda: f64) -> RowTuning {
        RowTuning::Fixed {
            lambda,
            lqa: LqaConfig::default(),
        }
    }

    #[test]
    fn unpenalized_reconstruction_is_sample_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = DMatrix::from_fn(200, 6, |_, _| normal(&mut rng));
        let w = DMatrix::from_fn(200, 6, |i, j| w[(i, j)] + if j > 0 { 0.5 * w[(i, j - 1)] } else { 0.0 });
        let c = cholesky_select(&w, PenaltyKind::scad(), &fixed(0.0)).unwrap();
        assert!((&c.sigma - covariance_n(&w)).amax() < 1e-8);
        let l = c.l();
        let ldl = &l * &c.sigma * l.transpose();
        assert!((ldl - DMatrix::from_diagonal(&c.d_diag)).amax() < 1e-8);
        assert!((&c.sigma * &c.precision - DMatrix::<f64>::identity(6, 6)).amax() < 1e-6);
        assert_eq!(c.order, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn bivariate_regression_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho: f64 = 0.6;
        let n = 20_000;
        let w = DMatrix::from_fn(n, 2, |_, _| normal(&mut rng));
        let w = DMatrix::from_fn(n, 2, |i, j| if j == 0 { w[(i, 0)] } else { rho * w[(i, 0)] + (1.0 - rho * rho).sqrt() * w[(i, 1)] });
        let c = cholesky_select(&w, PenaltyKind::scad(), &fixed(0.0)).unwrap();
        assert!((c.phi[(1, 0)] - rho).abs() < 0.02);
        assert!((c.d_diag[1] - (1.0 - rho * rho)).abs() < 0.02);
    }

    #[test]
    fn single_column_is_scalar_variance() {
        let w = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 6.0]);
        let c = cholesky_select(&w, PenaltyKind::scad(), &fixed(0.0)).unwrap();
        assert!((c.sigma[(0, 0)] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn collinear_column_reports_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = DMatrix::from_fn(50, 3, |_, _| normal(&mut rng));
        let w = DMatrix::from_fn(50, 4, |i, j| if j == 3 { w[(i, 0)] } else { w[(i, j)] });
        let w = DMatrix::from_fn(50, 5, |i, j| if j < 4 { w[(i, j)] } else { w[(i, 0)] * 2.0 });
        match cholesky_select(&w, PenaltyKind::scad(), &fixed(0.0)) {
            Err(Error::Row { row, .. }) => assert!(row >= 3),
            other => panic!("expected row error, got {other:?}"),
        }
        assert!(cholesky_select(&DMatrix::zeros(2, 2), PenaltyKind::scad(), &fixed(0.0)).is_err());
    }

    #[test]
    fn identity_truth_gives_small_coefficients() {
        let mut hits = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let w = DMatrix::from_fn(2000, 5, |_, _| normal(&mut rng));
            let c = cholesky_select(&w, PenaltyKind::scad(), &RowTuning::Gcv(TuneOptions::default())).unwrap();
            let ok = c.phi.amax() <= 0.1 && c.d_diag.iter().all(|v| (v - 1.0).abs() <= 0.15);
            hits += usize::from(ok);
        }
        assert!(hits >= 19, "{hits}/20");
    }

    #[test]
    fn noiseless_single_factor() {
        let n = 40;
        let f = DMatrix::from_fn(n, 1, |i, _| (i as f64 * 0.37).sin());
        let b = DVector::from_vec(vec![1.0, -0.5, 2.0]);
        let y = DMatrix::from_fn(n, 3, |i, j| b[j] * f[(i, 0)]);
        let fc = factor_cov(&y, &f).unwrap();
        assert!(fc.sigma0.amax() < 1e-20);
        let var_f = covariance_n(&f)[(0, 0)];
        assert!((&fc.sigma - &b * b.transpose() * var_f).amax() < 1e-12);
    }

    fn factor_data(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let f = DMatrix::from_fn(n, k, |_, _| normal(rng));
        let b = DMatrix::from_fn(d, k, |_, _| normal(rng));
        let e = DMatrix::from_fn(n, d, |_, _| 0.5 * normal(rng));
        (&f * b.transpose() + e, f)
    }

    #[test]
    fn factor_estimate_full_rank_and_portfolio_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (y, f) = factor_data(&mut rng, 60, 80, 3);
        let fc = factor_cov(&y, &f).unwrap();
        let eigs = sym_eigenvalues_desc(&fc.sigma);
        assert!(*eigs.last().unwrap() > 0.0);
        assert!(*eigs.last().unwrap() >= -1e-10);
        let xi = DVector::from_element(80, 1.0 / 80.0);
        let risk = (xi.transpose() * &fc.sigma * &xi)[(0, 0)];
        let fitted = &f * fc.loadings.transpose() * &xi;
        let mean = fitted.mean();
        let var = fitted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 60.0;
        let idio: f64 = xi.iter().zip(fc.sigma0.iter()).map(|(w, s)| w * w * s).sum();
        assert!((risk - (var + idio)).abs() < 1e-10);
    }

    #[test]
    fn factor_rank_checks() {
        let f = DMatrix::from_fn(10, 2, |i, j| if j == 0 { i as f64 } else { 2.0 * i as f64 });
        assert!(matches!(factor_cov(&DMatrix::zeros(10, 3), &f), Err(Error::Singular(_))));
        let f = DMatrix::from_fn(3, 2, |i, j| (i + j) as f64);
        assert!(matches!(factor_cov(&DMatrix::zeros(3, 3), &f), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn compare_identity_and_errors() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let xi = DVector::from_vec(vec![0.5, 0.5]);
        let r = compare_estimators(&s, std::slice::from_ref(&s), &xi).unwrap();
        assert!(r[0].max_eigen_deviation < 1e-12);
        assert!(r[0].portfolio_risk_error < 1e-12);
        assert!(r[0].precision_error < 1e-12);
        assert!(r[0].inverse_frobenius_error.unwrap() < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(compare_estimators(&bad, std::slice::from_ref(&s), &xi).is_err());
        assert!(compare_estimators(&s, std::slice::from_ref(&s), &DVector::from_vec(vec![1.0, 1.0])).is_err());
    }
}
