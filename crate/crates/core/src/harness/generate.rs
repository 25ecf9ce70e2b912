//! Seeded data generators for the simulation studies.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cox::SurvivalData;
use crate::error::{Error, Result};
use crate::likelihoods::{logistic, Dataset};

/// Name recorded in every output describing the random generator.
pub const RNG_NAME: &str = "chacha8";

/// Generator for replicate `stream` of a run seeded with `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn invalid(field: &str, why: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("{field}: {why}"))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Rows are Gaussian with `corr(x_j, x_k) = rho^{|j−k|}`.
pub fn ar_design(rng: &mut ChaCha8Rng, n: usize, d: usize, rho: f64) -> Result<DMatrix<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(invalid("rho", format!("must lie in (-1, 1), got {rho}")));
    }
    let scale = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        let mut prev = 0.0;
        for j in 0..d {
            let z = normal(rng);
            prev = if j == 0 { z } else { rho * prev + scale * z };
            x[(i, j)] = prev;
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionParams {
    pub n: usize,
    pub beta: Vec<f64>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Noise standard deviation (Gaussian only).
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_rho() -> f64 {
    0.5
}

fn default_sigma() -> f64 {
    1.0
}

impl RegressionParams {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n", "must be positive"));
        }
        if self.beta.is_empty() {
            return Err(invalid("beta", "must be nonempty"));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(invalid("beta", "must be finite"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(invalid("sigma", format!("must be finite and nonnegative, got {}", self.sigma)));
        }
        Ok(())
    }

    fn design(&self, rng: &mut ChaCha8Rng) -> Result<(DMatrix<f64>, DVector<f64>)> {
        self.validate()?;
        let x = ar_design(rng, self.n, self.beta.len(), self.rho)?;
        let eta = &x * DVector::from_column_slice(&self.beta);
        Ok((x, eta))
    }
}

/// `y = Xβ + σε`.
pub fn linear(params: &RegressionParams, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let (x, eta) = params.design(rng)?;
    let y = eta.map(|e| e + params.sigma * normal(rng));
    Dataset::new(x, y)
}

/// Bernoulli responses in {0, 1} with logit link.
pub fn logistic_data(params: &RegressionParams, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let (x, eta) = params.design(rng)?;
    let y = eta.map(|e| f64::from(u8::from(rng.random_bool(logistic(e)))));
    Dataset::new(x, y)
}

pub fn poisson_data(params: &RegressionParams, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let (x, eta) = params.design(rng)?;
    let mut y = DVector::zeros(params.n);
    for i in 0..params.n {
        let mean = eta[i].exp();
        let dist = Poisson::new(mean).map_err(|e| invalid("beta", format!("Poisson mean {mean}: {e}")))?;
        y[i] = rng.sample(dist);
    }
    Dataset::new(x, y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalParams {
    pub n: usize,
    pub beta: Vec<f64>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Constant baseline hazard.
    #[serde(default = "default_baseline")]
    pub baseline_hazard: f64,
    /// Rate of the independent exponential censoring time; 0 disables censoring.
    #[serde(default)]
    pub censoring_rate: f64,
}

fn default_baseline() -> f64 {
    1.0
}

/// Exponential failure times `T ~ Exp(h₀ exp(xᵀβ))` with independent
/// exponential censoring.
pub fn survival(params: &SurvivalParams, rng: &mut ChaCha8Rng) -> Result<SurvivalData> {
    if params.n == 0 {
        return Err(invalid("n", "must be positive"));
    }
    if params.beta.is_empty() {
        return Err(invalid("beta", "must be nonempty"));
    }
    if !(params.baseline_hazard > 0.0) || !params.baseline_hazard.is_finite() {
        return Err(invalid("baseline_hazard", format!("must be positive, got {}", params.baseline_hazard)));
    }
    if !(params.censoring_rate >= 0.0) || !params.censoring_rate.is_finite() {
        return Err(invalid("censoring_rate", format!("must be nonnegative, got {}", params.censoring_rate)));
    }
    let x = ar_design(rng, params.n, params.beta.len(), params.rho)?;
    let eta = &x * DVector::from_column_slice(&params.beta);
    let mut time = Vec::with_capacity(params.n);
    let mut status = Vec::with_capacity(params.n);
    for e in eta.iter() {
        let rate = params.baseline_hazard * e.exp();
        let t: f64 = rng.sample(Exp::new(rate).map_err(|err| invalid("beta", format!("hazard {rate}: {err}")))?);
        if params.censoring_rate > 0.0 {
            let c: f64 = rng.sample(Exp::new(params.censoring_rate).expect("validated rate"));
            time.push(t.min(c));
            status.push(t <= c);
        } else {
            time.push(t);
            status.push(true);
        }
    }
    SurvivalData::new(x, time, status)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorParams {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    /// Idiosyncratic noise standard deviation; 0 gives an exact rank-K model.
    #[serde(default = "default_idio")]
    pub idio_sd: f64,
}

fn default_idio() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorSample {
    pub returns: DMatrix<f64>,
    pub factors: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    /// `B Bᵀ + σ² I`, the covariance of the returns.
    pub sigma_true: DMatrix<f64>,
}

/// `Y = F Bᵀ + E` with standard normal factors and loadings.
pub fn factor(params: &FactorParams, rng: &mut ChaCha8Rng) -> Result<FactorSample> {
    if params.n == 0 || params.d == 0 || params.k == 0 {
        return Err(invalid("n/d/k", "must all be positive"));
    }
    if !(params.idio_sd >= 0.0) || !params.idio_sd.is_finite() {
        return Err(invalid("idio_sd", format!("must be nonnegative, got {}", params.idio_sd)));
    }
    let loadings = DMatrix::from_fn(params.d, params.k, |_, _| normal(rng));
    let factors = DMatrix::from_fn(params.n, params.k, |_, _| normal(rng));
    let noise = DMatrix::from_fn(params.n, params.d, |_, _| params.idio_sd * normal(rng));
    let returns = &factors * loadings.transpose() + noise;
    let mut sigma_true = &loadings * loadings.transpose();
    for i in 0..params.d {
        sigma_true[(i, i)] += params.idio_sd * params.idio_sd;
    }
    Ok(FactorSample {
        returns,
        factors,
        loadings,
        sigma_true,
    })
}

/// `n` draws from `N(0, Σ)`.
pub fn gaussian_sample(sigma: &DMatrix<f64>, n: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    let d = sigma.nrows();
    if sigma.ncols() != d {
        return Err(invalid("sigma", "must be square"));
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| invalid("sigma", "must be positive definite"))?;
    let z = DMatrix::from_fn(n, d, |_, _| normal(rng));
    Ok(z * chol.l().transpose())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArParams {
    pub n: usize,
    pub d: usize,
    /// `W_t = Σ_k coefficients[k] W_{t−k−1} + ε_t`.
    pub coefficients: Vec<f64>,
    #[serde(default = "default_sigma")]
    pub innovation_sd: f64,
}

/// Samples whose modified-Cholesky factor is banded with the given lags.
pub fn ar_series(params: &ArParams, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    if params.n == 0 || params.d == 0 {
        return Err(invalid("n/d", "must be positive"));
    }
    if !(params.innovation_sd > 0.0) {
        return Err(invalid("innovation_sd", "must be positive"));
    }
    let mut w = DMatrix::zeros(params.n, params.d);
    for i in 0..params.n {
        for t in 0..params.d {
            let mut v = params.innovation_sd * normal(rng);
            for (k, a) in params.coefficients.iter().enumerate() {
                if t > k {
                    v += a * w[(i, t - k - 1)];
                }
            }
            w[(i, t)] = v;
        }
    }
    Ok(w)
}

/// The true `Φ` of [`ar_series`].
pub fn ar_phi(params: &ArParams) -> DMatrix<f64> {
    DMatrix::from_fn(params.d, params.d, |t, j| {
        if j < t && t - j <= params.coefficients.len() {
            params.coefficients[t - j - 1]
        } else {
            0.0
        }
    })
}

/// Replaces the columns with an orthogonal basis scaled so that `XᵀX = n I`.
pub fn orthonormalize(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    if n < d {
        return Err(invalid("design", format!("{n} rows cannot hold {d} orthonormal columns")));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let max = r.diagonal().abs().max();
    if !(max > 0.0) || r.diagonal().abs().min() <= 1e-10 * max {
        return Err(Error::Singular("design is rank deficient".into()));
    }
    Ok(qr.q() * (n as f64).sqrt())
}

/// Random `n × d` design with `XᵀX = n I`.
pub fn orthonormal_design(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    let raw = DMatrix::from_fn(n, d, |_, _| normal(rng));
    orthonormalize(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::covariance_n;

    #[test]
    fn zero_signal_zero_noise() {
        let p = RegressionParams { n: 20, beta: vec![0.0; 3], rho: 0.5, sigma: 0.0 };
        let data = linear(&p, &mut rng_for(1, 0)).unwrap();
        assert!(data.y().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_censoring_when_rate_zero() {
        let p = SurvivalParams { n: 50, beta: vec![0.5, 0.0], rho: 0.0, baseline_hazard: 1.0, censoring_rate: 0.0 };
        let s = survival(&p, &mut rng_for(2, 0)).unwrap();
        assert!(s.status().iter().all(|&v| v));
        let p = SurvivalParams { censoring_rate: 1.0, ..p };
        let s = survival(&p, &mut rng_for(2, 0)).unwrap();
        assert!(s.status().iter().any(|&v| !v));
    }

    #[test]
    fn exact_factor_model_has_rank_k() {
        let p = FactorParams { n: 40, d: 10, k: 2, idio_sd: 0.0 };
        let s = factor(&p, &mut rng_for(3, 0)).unwrap();
        let eig = crate::linalg::sym_eigenvalues_desc(&covariance_n(&s.returns));
        assert!(eig[2..].iter().all(|v| v.abs() < 1e-9 * eig[0]));
    }

    #[test]
    fn same_seed_same_draws() {
        let p = RegressionParams { n: 10, beta: vec![1.0, 2.0], rho: 0.3, sigma: 1.0 };
        assert_eq!(linear(&p, &mut rng_for(9, 4)).unwrap(), linear(&p, &mut rng_for(9, 4)).unwrap());
        assert_ne!(linear(&p, &mut rng_for(9, 4)).unwrap(), linear(&p, &mut rng_for(9, 5)).unwrap());
    }

    #[test]
    fn invalid_fields_are_named() {
        let p = RegressionParams { n: 10, beta: vec![1.0], rho: 1.5, sigma: 1.0 };
        let err = linear(&p, &mut rng_for(0, 0)).unwrap_err().to_string();
        assert!(err.contains("rho"));
        let p = RegressionParams { n: 10, beta: vec![1.0], rho: 0.0, sigma: -1.0 };
        assert!(linear(&p, &mut rng_for(0, 0)).unwrap_err().to_string().contains("sigma"));
    }

    #[test]
    fn orthonormal_design_is_orthonormal() {
        let x = orthonormal_design(64, 8, &mut rng_for(5, 0)).unwrap();
        let g = x.transpose() * &x / 64.0;
        assert!((g - DMatrix::<f64>::identity(8, 8)).amax() < 1e-12);
    }

    #[test]
    fn ar_phi_is_banded() {
        let p = ArParams { n: 5, d: 4, coefficients: vec![0.5], innovation_sd: 1.0 };
        let phi = ar_phi(&p);
        assert_eq!(phi[(1, 0)], 0.5);
        assert_eq!(phi[(2, 0)], 0.0);
        assert_eq!(phi[(3, 2)], 0.5);
    }
}
