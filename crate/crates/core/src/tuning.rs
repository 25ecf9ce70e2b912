//! GCV selection of the regularization level, sandwich covariance and the
//! classical subset-selection criteria.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::likelihoods::{Dataset, Likelihood};
use crate::linalg::{center_columns, least_squares, select_columns, select_rows_cols, symmetrize};
use crate::lqa::{self, FitResult, LqaConfig};
use crate::penalty::{PenaltyKind, PenaltySpec};

pub const DEFAULT_GRID_SIZE: usize = 50;
pub const DEFAULT_GRID_RATIO: f64 = 1e-4;

/// `tr[(J + nΣ_λ)⁻¹ J]` over the active set, with `J` the observed information.
pub fn effective_params(fit: &FitResult, lik: &dyn Likelihood) -> Result<f64> {
    let act = &fit.active_set;
    if act.is_empty() {
        return Ok(0.0);
    }
    let n = lik.n_obs() as f64;
    let (_, h) = lik.grad_hess(&fit.beta);
    let j = -select_rows_cols(&h, act);
    let mut m = j.clone();
    for (k, &c) in act.iter().enumerate() {
        m[(k, k)] += n * fit.sigma_lambda[c];
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Singular("J + nΣ_λ is not positive definite".into()))?;
    Ok(chol.solve(&j).trace())
}

/// `−ℓ / [n (1 − e/n)²]`, or `+∞` when `e ≥ n`.
pub fn gcv_score(loglik: f64, e: f64, n: usize) -> f64 {
    let n = n as f64;
    if e >= n {
        return f64::INFINITY;
    }
    let shrink = 1.0 - e / n;
    -loglik / (n * shrink * shrink)
}

/// Unpenalized MLE and its standard errors from the inverse observed information.
pub fn mle_standard_errors(lik: &dyn Likelihood) -> Result<(DVector<f64>, DVector<f64>)> {
    let beta = lqa::mle(lik)?;
    let (_, h) = lik.grad_hess(&beta);
    let cov = crate::linalg::inverse_spd(&(-h))?;
    let se = cov.diagonal().map(|v| v.max(0.0).sqrt());
    Ok((beta, se))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// `λ_j = λ · se(β̂_MLE,j)`.
    MleStandardErrors,
    /// The MLE does not exist; `λ_j = λ`.
    Unit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOptions {
    /// Explicit base-λ grid; when absent a log-spaced grid ending at `λ_max` is used.
    pub grid: Option<Vec<f64>>,
    pub grid_size: usize,
    pub lqa: LqaConfig,
    /// Coordinates left unpenalized.
    pub unpenalized: Vec<usize>,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            grid: None,
            grid_size: DEFAULT_GRID_SIZE,
            lqa: LqaConfig::default(),
            unpenalized: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub lambda: f64,
    pub loglik: f64,
    pub effective_params: f64,
    pub gcv: f64,
    pub active_size: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningResult {
    pub lambda_grid: Vec<f64>,
    pub gcv_scores: Vec<f64>,
    pub points: Vec<GridPoint>,
    pub chosen_index: usize,
    pub chosen_lambda: f64,
    pub per_coordinate_lambda: Vec<f64>,
    pub scaling: Scaling,
    pub fit_at_chosen: FitResult,
}

impl TuningResult {
    pub fn to_json(&self) -> serde_json::Value {
        let points: Vec<_> = self
            .points
            .iter()
            .map(|p| {
                json!({
                    "lambda": p.lambda,
                    "loglik": p.loglik,
                    "effective_params": p.effective_params,
                    "gcv": finite_or_null(p.gcv),
                    "active_size": p.active_size,
                    "converged": p.converged,
                })
            })
            .collect();
        json!({
            "lambda_grid": self.lambda_grid,
            "gcv_scores": self.gcv_scores.iter().map(|&v| finite_or_null(v)).collect::<Vec<_>>(),
            "grid": points,
            "chosen_index": self.chosen_index,
            "chosen_lambda": self.chosen_lambda,
            "per_coordinate_lambda": self.per_coordinate_lambda,
            "scaling": self.scaling,
            "fit": self.fit_at_chosen.to_json(),
        })
    }
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

/// `n` log-spaced values on `[hi · ratio, hi]`, ascending.
pub fn log_grid(hi: f64, ratio: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let lo = (hi * ratio).ln();
    let step = (hi.ln() - lo) / (n - 1) as f64;
    (0..n).map(|k| if k + 1 == n { hi } else { (lo + step * k as f64).exp() }).collect()
}

/// Per-coordinate penalties at base level `lambda`.
pub fn scaled_penalty(kind: PenaltyKind, lambda: f64, scale: &[f64], unpenalized: &[usize]) -> Result<Vec<PenaltySpec>> {
    scale
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            if unpenalized.contains(&j) {
                Ok(PenaltySpec::unpenalized(kind))
            } else {
                PenaltySpec::new(kind, lambda * s)
            }
        })
        .collect()
}

/// Fits at every grid point and returns the GCV minimizer.
pub fn gcv_select(lik: &dyn Likelihood, kind: PenaltyKind, options: &TuneOptions) -> Result<TuningResult> {
    kind.validate()?;
    options.lqa.validate()?;
    let d = lik.dim();
    let n = lik.n_obs();
    if let Some(&bad) = options.unpenalized.iter().find(|&&j| j >= d) {
        return Err(Error::Dimension(format!("unpenalized index {bad} out of range for d = {d}")));
    }
    let penalized: Vec<usize> = (0..d).filter(|j| !options.unpenalized.contains(j)).collect();

    let (scale, scaling, lambda_max) = match mle_standard_errors(lik) {
        Ok((beta, se)) if se.iter().all(|s| *s > 0.0 && s.is_finite()) => {
            let lmax = penalized.iter().map(|&j| beta[j].abs() / se[j]).fold(0.0, f64::max);
            (se.as_slice().to_vec(), Scaling::MleStandardErrors, lmax)
        }
        Ok(_) | Err(Error::MleUnavailable(_)) | Err(Error::Singular(_)) => {
            let g = lik.gradient(&DVector::zeros(d));
            let lmax = penalized.iter().map(|&j| g[j].abs() / n as f64).fold(0.0, f64::max);
            (vec![1.0; d], Scaling::Unit, lmax)
        }
        Err(e) => return Err(e),
    };

    let grid = match &options.grid {
        Some(g) => {
            if g.is_empty() {
                return Err(Error::InvalidInput("lambda grid is empty".into()));
            }
            if let Some(bad) = g.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
                return Err(Error::InvalidInput(format!("grid values must be finite and nonnegative, got {bad}")));
            }
            g.clone()
        }
        None => {
            if options.grid_size == 0 {
                return Err(Error::InvalidInput("grid_size must be at least 1".into()));
            }
            let hi = if lambda_max > 0.0 && lambda_max.is_finite() { lambda_max } else { 1.0 };
            log_grid(hi, DEFAULT_GRID_RATIO, options.grid_size)
        }
    };

    let evaluated: Vec<Result<(GridPoint, FitResult)>> = grid
        .par_iter()
        .map(|&lambda| {
            let pen = scaled_penalty(kind, lambda, &scale, &options.unpenalized)?;
            let fit = match lqa::fit(lik, &pen, &options.lqa) {
                Ok(f) => f,
                Err(Error::Singular(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let loglik = lik.loglik(&fit.beta);
            let e = match effective_params(&fit, lik) {
                Ok(e) => e,
                Err(Error::Singular(_)) => f64::INFINITY,
                Err(err) => return Err(err),
            };
            let gcv = if e.is_finite() && loglik.is_finite() { gcv_score(loglik, e, n) } else { f64::INFINITY };
            let point = GridPoint {
                lambda,
                loglik,
                effective_params: e,
                gcv,
                active_size: fit.active_set.len(),
                converged: fit.converged,
            };
            Ok(Some((point, fit)))
        })
        .map(|r| {
            r.and_then(|o| {
                o.ok_or_else(|| Error::Singular("working system singular at this grid point".into()))
            })
        })
        .collect();

    let mut points = Vec::with_capacity(grid.len());
    let mut fits = Vec::with_capacity(grid.len());
    for (r, &lambda) in evaluated.into_iter().zip(&grid) {
        match r {
            Ok((p, f)) => {
                points.push(p);
                fits.push(Some(f));
            }
            Err(Error::Singular(_)) => {
                points.push(GridPoint {
                    lambda,
                    loglik: f64::NAN,
                    effective_params: f64::NAN,
                    gcv: f64::INFINITY,
                    active_size: 0,
                    converged: false,
                });
                fits.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let gcv_scores: Vec<f64> = points.iter().map(|p| p.gcv).collect();
    let chosen_index = argmin(&gcv_scores)
        .ok_or_else(|| Error::Singular("no grid point has a finite GCV score".into()))?;
    let chosen_lambda = grid[chosen_index];
    let fit_at_chosen = fits[chosen_index].take().expect("finite score implies a fit");
    let per_coordinate_lambda = fit_at_chosen.penalty.iter().map(|p| p.lambda()).collect();
    Ok(TuningResult {
        lambda_grid: grid,
        gcv_scores,
        points,
        chosen_index,
        chosen_lambda,
        per_coordinate_lambda,
        scaling,
        fit_at_chosen,
    })
}

/// First index attaining the smallest finite value.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// `M⁻¹ C M⁻¹` over the active set, where `M = J + nΣ_λ` and `C` is the
/// centered sum of outer products of per-observation scores.
pub fn sandwich_cov(fit: &FitResult, lik: &dyn Likelihood) -> Result<DMatrix<f64>> {
    let act = &fit.active_set;
    if act.is_empty() {
        return Err(Error::InvalidInput("sandwich covariance needs a nonempty active set".into()));
    }
    let n = lik.n_obs() as f64;
    let (_, h) = lik.grad_hess(&fit.beta);
    let mut m = -select_rows_cols(&h, act);
    for (k, &c) in act.iter().enumerate() {
        m[(k, k)] += n * fit.sigma_lambda[c];
    }
    let m_inv = crate::linalg::inverse_spd(&m)
        .map_err(|_| Error::Singular("J + nΣ_λ is not positive definite".into()))?;
    let scores = select_columns(&lik.score_contributions(&fit.beta), act);
    let centered = center_columns(&scores);
    let c = centered.transpose() * &centered;
    let mut cov = &m_inv * c * &m_inv;
    symmetrize(&mut cov);
    Ok(cov)
}

/// Sandwich standard errors of the active coefficients.
pub fn sandwich_se(fit: &FitResult, lik: &dyn Likelihood) -> Result<Vec<f64>> {
    Ok(sandwich_cov(fit, lik)?.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetCriteria {
    pub subset: Vec<usize>,
    pub rss: f64,
    pub adjusted_r2: f64,
    pub gcv: f64,
    /// `RSS/(2n) + λ²|M|/2`.
    pub pls: f64,
}

/// Least-squares criteria for each candidate subset.
///
/// The model always contains an intercept, so the data are centered and a
/// subset of size `k` has `m = k + 1` parameters.
pub fn classical_criteria(data: &Dataset, subsets: &[Vec<usize>], lambda: f64) -> Result<Vec<SubsetCriteria>> {
    let n = data.n();
    let d = data.d();
    let xc = center_columns(data.x());
    let mean = data.y().mean();
    let yc = data.y().map(|v| v - mean);
    let tss = yc.norm_squared();
    let nf = n as f64;
    subsets
        .iter()
        .map(|s| {
            if let Some(&bad) = s.iter().find(|&&j| j >= d) {
                return Err(Error::Dimension(format!("subset references column {bad}, d = {d}")));
            }
            let rss = if s.is_empty() { tss } else { least_squares(&select_columns(&xc, s), &yc)?.1 };
            let m = (s.len() + 1) as f64;
            let adjusted_r2 = if nf > m && tss > 0.0 {
                1.0 - (rss / (nf - m)) / (tss / (nf - 1.0))
            } else {
                f64::NAN
            };
            let shrink = 1.0 - m / nf;
            Ok(SubsetCriteria {
                subset: s.clone(),
                rss,
                adjusted_r2,
                gcv: rss / (nf * shrink * shrink),
                pls: rss / (2.0 * nf) + lambda * lambda * s.len() as f64 / 2.0,
            })
        })
        .collect()
}
