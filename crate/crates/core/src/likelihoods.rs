//! Generalized linear model log-likelihoods (Gaussian, logistic, Poisson),
//! and the [`Likelihood`] interface the solver maximizes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything the LQA solver can maximize: an un-averaged log-likelihood
/// `ℓ(β)` over `n_obs()` observations, with analytic derivatives.
pub trait Likelihood: Sync {
    fn n_obs(&self) -> usize;

    fn dim(&self) -> usize;

    /// `ℓ(β)`, summed over observations.
    fn loglik(&self, beta: &DVector<f64>) -> f64;

    /// `(∇ℓ(β), ∇²ℓ(β))`, summed over observations.
    fn grad_hess(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);

    /// Per-observation score contributions, one row per observation; the rows
    /// sum to `∇ℓ(β)`.
    fn score_contributions(&self, beta: &DVector<f64>) -> DMatrix<f64>;

    fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        self.grad_hess(beta).0
    }
}

/// Design matrix and response, with optional nonnegative observation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    weights: Option<DVector<f64>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, d) = x.shape();
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput(format!("dataset needs n ≥ 1 and d ≥ 1, got {n}x{d}")));
        }
        if y.len() != n {
            return Err(Error::Dimension(format!("design has {n} rows but response has {}", y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dataset contains NaN or infinite values".into()));
        }
        Ok(Dataset { x, y, weights: None })
    }

    pub fn with_weights(mut self, weights: DVector<f64>) -> Result<Self> {
        if weights.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{} weights for {} observations",
                weights.len(),
                self.n()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn weights(&self) -> Option<&DVector<f64>> {
        self.weights.as_ref()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    /// Keeps only the listed columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.d()) {
            return Err(Error::Dimension(format!("column {bad} out of range for d = {}", self.d())));
        }
        Ok(Dataset {
            x: crate::linalg::select_columns(&self.x, cols),
            y: self.y.clone(),
            weights: self.weights.clone(),
        })
    }

    /// Each row repeated `times` times, in blocks.
    pub fn replicate(&self, times: usize) -> Dataset {
        let n = self.n();
        let rows = n * times;
        Dataset {
            x: DMatrix::from_fn(rows, self.d(), |i, j| self.x[(i % n, j)]),
            y: DVector::from_fn(rows, |i, _| self.y[i % n]),
            weights: self
                .weights
                .as_ref()
                .map(|w| DVector::from_fn(rows, |i, _| w[i % n])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlmFamily {
    /// Identity link, σ² fixed at 1.
    Gaussian,
    /// Logit link, Bernoulli response.
    Logistic,
    /// Log link, Poisson counts.
    Poisson,
}

impl GlmFamily {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" | "linear" => Ok(GlmFamily::Gaussian),
            "logistic" | "binomial" | "bernoulli" => Ok(GlmFamily::Logistic),
            "poisson" => Ok(GlmFamily::Poisson),
            other => Err(Error::InvalidInput(format!("unknown family `{other}`"))),
        }
    }

    /// Validates the response for this family. Logistic data coded `{−1, 1}`
    /// is converted to `{0, 1}`.
    pub fn prepare(&self, data: Dataset) -> Result<Dataset> {
        match self {
            GlmFamily::Gaussian => Ok(data),
            GlmFamily::Logistic => {
                let y = data.y();
                if y.iter().all(|&v| v == 0.0 || v == 1.0) {
                    Ok(data)
                } else if y.iter().all(|&v| v == -1.0 || v == 1.0) {
                    let mapped = y.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    Ok(Dataset { y: mapped, ..data })
                } else {
                    Err(Error::InvalidInput(
                        "logistic responses must be coded {0,1} or {-1,1}".into(),
                    ))
                }
            }
            GlmFamily::Poisson => {
                if data.y().iter().all(|&v| v >= 0.0 && v.fract() == 0.0) {
                    Ok(data)
                } else {
                    Err(Error::InvalidInput(
                        "Poisson responses must be nonnegative integers".into(),
                    ))
                }
            }
        }
    }

    /// `log f(y | η)` up to terms free of β, and its first and second
    /// derivatives with respect to η.
    fn unit(&self, eta: f64, y: f64) -> (f64, f64, f64) {
        match self {
            GlmFamily::Gaussian => {
                let r = y - eta;
                (-0.5 * r * r, r, -1.0)
            }
            GlmFamily::Logistic => {
                let p = logistic(eta);
                (y * eta - log1p_exp(eta), y - p, -p * (1.0 - p))
            }
            GlmFamily::Poisson => {
                let mu = eta.exp();
                (y * eta - mu, y - mu, -mu)
            }
        }
    }

    /// `n⁻¹ Σ log f(g(x_iᵀβ), y_i)`.
    pub fn avg_loglik(&self, beta: &DVector<f64>, data: &Dataset) -> Result<f64> {
        check_dim(beta, data)?;
        Ok(self.sum_loglik(beta, data) / data.n() as f64)
    }

    /// Averaged score and Hessian of [`avg_loglik`](Self::avg_loglik).
    pub fn score_and_hessian(
        &self,
        beta: &DVector<f64>,
        data: &Dataset,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        check_dim(beta, data)?;
        let (g, h) = self.sum_grad_hess(beta, data);
        let n = data.n() as f64;
        Ok((g / n, h / n))
    }

    fn sum_loglik(&self, beta: &DVector<f64>, data: &Dataset) -> f64 {
        let eta = data.x() * beta;
        (0..data.n())
            .map(|i| data.weight(i) * self.unit(eta[i], data.y()[i]).0)
            .sum()
    }

    fn sum_grad_hess(&self, beta: &DVector<f64>, data: &Dataset) -> (DVector<f64>, DMatrix<f64>) {
        let x = data.x();
        let eta = x * beta;
        let n = data.n();
        let mut resid = DVector::zeros(n);
        let mut curv = DVector::zeros(n);
        for i in 0..n {
            let (_, d1, d2) = self.unit(eta[i], data.y()[i]);
            let w = data.weight(i);
            resid[i] = w * d1;
            curv[i] = w * d2;
        }
        let grad = x.transpose() * resid;
        let mut weighted = x.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= curv[i];
        }
        let mut hess = x.transpose() * weighted;
        crate::linalg::symmetrize(&mut hess);
        (grad, hess)
    }
}

fn check_dim(beta: &DVector<f64>, data: &Dataset) -> Result<()> {
    if beta.len() != data.d() {
        return Err(Error::Dimension(format!(
            "beta has length {} but the design has {} columns",
            beta.len(),
            data.d()
        )));
    }
    Ok(())
}

/// `log(1 + e^η)` without overflow.
pub fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// A GLM family bound to its data.
#[derive(Debug, Clone)]
pub struct GlmObjective {
    family: GlmFamily,
    data: Dataset,
}

impl GlmObjective {
    /// Validates the response for the family (see [`GlmFamily::prepare`]).
    pub fn new(family: GlmFamily, data: Dataset) -> Result<Self> {
        let data = family.prepare(data)?;
        Ok(GlmObjective { family, data })
    }

    pub fn family(&self) -> GlmFamily {
        self.family
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }
}

impl Likelihood for GlmObjective {
    fn n_obs(&self) -> usize {
        self.data.n()
    }

    fn dim(&self) -> usize {
        self.data.d()
    }

    fn loglik(&self, beta: &DVector<f64>) -> f64 {
        self.family.sum_loglik(beta, &self.data)
    }

    fn grad_hess(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        self.family.sum_grad_hess(beta, &self.data)
    }

    fn score_contributions(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let x = self.data.x();
        let eta = x * beta;
        let mut out = x.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            let (_, d1, _) = self.family.unit(eta[i], self.data.y()[i]);
            row *= self.data.weight(i) * d1;
        }
        out
    }
}
