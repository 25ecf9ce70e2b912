//! Monte Carlo studies. Replicate `r` of a run with seed `s` draws from
//! stream `r` of a ChaCha8 generator seeded with `s`, so results do not depend
//! on scheduling.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::covariance::{cholesky_select, compare_estimators, factor_cov, RowTuning};
use crate::cox::CoxObjective;
use crate::error::{Error, Result};
use crate::harness::generate::{
    ar_phi, ar_series, factor, linear, orthonormal_design, rng_for, survival, ArParams, FactorParams,
    RegressionParams, SurvivalParams, RNG_NAME,
};
use crate::harness::io::write_json;
use crate::harness::orthonormal::{fit_orthonormal, Universal};
use crate::likelihoods::{Dataset, GlmFamily, GlmObjective};
use crate::linalg::{covariance_n, least_squares, select_columns};
use crate::lqa::{self, LqaConfig};
use crate::penalty::{PenaltyKind, PenaltySpec};
use crate::qloss::{empirical_risk_gap, ErmLoss, ErmObjective};
use crate::tuning::{gcv_select, sandwich_se, TuneOptions, DEFAULT_GRID_SIZE};

fn default_grid_size() -> usize {
    DEFAULT_GRID_SIZE
}

fn default_scad() -> PenaltyKind {
    PenaltyKind::scad()
}

fn run_replicates<T: Send>(seed: u64, replicates: usize, f: impl Fn(&mut ChaCha8Rng) -> Result<T> + Sync) -> Result<Vec<T>> {
    if replicates == 0 {
        return Err(Error::InvalidInput("replicates: must be at least 1".into()));
    }
    (0..replicates)
        .into_par_iter()
        .map(|r| f(&mut rng_for(seed, r as u64)).map_err(|e| Error::Row { row: r, source: Box::new(e) }))
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

fn rate(flags: impl IntoIterator<Item = bool>) -> f64 {
    mean(flags.into_iter().map(|b| f64::from(u8::from(b))))
}

fn support(beta: &[f64]) -> Vec<usize> {
    (0..beta.len()).filter(|&j| beta[j] != 0.0).collect()
}

// ---------------------------------------------------------------------------
// Oracle property of SCAD + GCV

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub n: usize,
    pub beta: Vec<f64>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_scad")]
    pub penalty: PenaltyKind,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
}

fn default_sigma() -> f64 {
    1.0
}

fn default_rho() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReplicate {
    pub active_set: Vec<usize>,
    pub exact_support: bool,
    pub chosen_lambda: f64,
    /// `‖β̂_S − β̂_OLS,S‖₂` over the true support `S`.
    pub oracle_distance: f64,
    pub correct_zeros: usize,
    pub incorrect_zeros: usize,
    pub beta: Vec<f64>,
    /// Sandwich standard errors, `None` off the active set.
    pub sandwich_se: Vec<Option<f64>>,
    pub converged: bool,
}

pub fn oracle_replicate(p: &OracleParams, rng: &mut ChaCha8Rng) -> Result<OracleReplicate> {
    let data = linear(
        &RegressionParams {
            n: p.n,
            beta: p.beta.clone(),
            rho: p.rho,
            sigma: p.sigma,
        },
        rng,
    )?;
    let truth = support(&p.beta);
    let lik = GlmObjective::new(GlmFamily::Gaussian, data.clone())?;
    let tune = gcv_select(
        &lik,
        p.penalty,
        &TuneOptions {
            grid_size: p.grid_size,
            ..Default::default()
        },
    )?;
    let fit = &tune.fit_at_chosen;
    let oracle = if truth.is_empty() {
        DVector::zeros(0)
    } else {
        least_squares(&select_columns(data.x(), &truth), data.y())?.0
    };
    let oracle_distance = truth
        .iter()
        .enumerate()
        .map(|(k, &j)| (fit.beta[j] - oracle[k]).powi(2))
        .sum::<f64>()
        .sqrt();
    let se = if fit.active_set.is_empty() { vec![] } else { sandwich_se(fit, &lik)? };
    let mut sandwich = vec![None; p.beta.len()];
    for (k, &j) in fit.active_set.iter().enumerate() {
        sandwich[j] = Some(se[k]);
    }
    Ok(OracleReplicate {
        exact_support: fit.active_set == truth,
        active_set: fit.active_set.clone(),
        chosen_lambda: tune.chosen_lambda,
        oracle_distance,
        correct_zeros: (0..p.beta.len()).filter(|&j| p.beta[j] == 0.0 && fit.beta[j] == 0.0).count(),
        incorrect_zeros: truth.iter().filter(|&&j| fit.beta[j] == 0.0).count(),
        beta: fit.beta.as_slice().to_vec(),
        sandwich_se: sandwich,
        converged: fit.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub replicates: usize,
    pub support_recovery_rate: f64,
    pub median_oracle_distance: f64,
}

pub fn summarize_oracle(reps: &[OracleReplicate]) -> OracleSummary {
    let mut d: Vec<f64> = reps.iter().map(|r| r.oracle_distance).collect();
    OracleSummary {
        replicates: reps.len(),
        support_recovery_rate: rate(reps.iter().map(|r| r.exact_support)),
        median_oracle_distance: median(&mut d),
    }
}

/// Sandwich standard errors against the Monte Carlo spread, per true nonzero coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichCoordinate {
    pub index: usize,
    pub mc_sd: f64,
    pub mean_sandwich_se: f64,
    pub ratio: f64,
}

pub fn summarize_sandwich(p: &OracleParams, reps: &[OracleReplicate]) -> Vec<SandwichCoordinate> {
    support(&p.beta)
        .into_iter()
        .map(|j| {
            let est: Vec<f64> = reps.iter().map(|r| r.beta[j]).collect();
            let m = mean(est.iter().copied());
            let var = est.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (est.len() as f64 - 1.0);
            let mc_sd = var.sqrt();
            let mean_sandwich_se = mean(reps.iter().filter_map(|r| r.sandwich_se[j]));
            SandwichCoordinate {
                index: j,
                mc_sd,
                mean_sandwich_se,
                ratio: mean_sandwich_se / mc_sd,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Cox model support recovery

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxParams {
    pub n: usize,
    pub beta: Vec<f64>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_one")]
    pub baseline_hazard: f64,
    #[serde(default)]
    pub censoring_rate: f64,
    #[serde(default = "default_scad")]
    pub penalty: PenaltyKind,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxReplicate {
    pub active_set: Vec<usize>,
    pub exact_support: bool,
    pub chosen_lambda: f64,
    pub censored_fraction: f64,
    pub beta: Vec<f64>,
}

pub fn cox_replicate(p: &CoxParams, rng: &mut ChaCha8Rng) -> Result<CoxReplicate> {
    let data = survival(
        &SurvivalParams {
            n: p.n,
            beta: p.beta.clone(),
            rho: p.rho,
            baseline_hazard: p.baseline_hazard,
            censoring_rate: p.censoring_rate,
        },
        rng,
    )?;
    let censored_fraction = rate(data.status().iter().map(|s| !s));
    let lik = CoxObjective::new(data)?;
    let tune = gcv_select(
        &lik,
        p.penalty,
        &TuneOptions {
            grid_size: p.grid_size,
            ..Default::default()
        },
    )?;
    let fit = tune.fit_at_chosen;
    Ok(CoxReplicate {
        exact_support: fit.active_set == support(&p.beta),
        active_set: fit.active_set,
        chosen_lambda: tune.chosen_lambda,
        censored_fraction,
        beta: fit.beta.as_slice().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxSummary {
    pub replicates: usize,
    pub support_recovery_rate: f64,
    pub mean_censored_fraction: f64,
}

pub fn summarize_cox(reps: &[CoxReplicate]) -> CoxSummary {
    CoxSummary {
        replicates: reps.len(),
        support_recovery_rate: rate(reps.iter().map(|r| r.exact_support)),
        mean_censored_fraction: mean(reps.iter().map(|r| r.censored_fraction)),
    }
}

// ---------------------------------------------------------------------------
// Persistence of the L1-penalized least-squares fit

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceParams {
    #[serde(default = "default_persistence_d")]
    pub d: usize,
    #[serde(default = "default_persistence_s")]
    pub s: usize,
    #[serde(default = "default_one")]
    pub signal: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_n_small")]
    pub n_small: usize,
    #[serde(default = "default_n_large")]
    pub n_large: usize,
    /// λ = lambda_scale · σ · √(2 log d / n).
    #[serde(default = "default_lambda_scale")]
    pub lambda_scale: f64,
    #[serde(default = "default_mc_n")]
    pub mc_n: usize,
}

fn default_persistence_d() -> usize {
    50
}
fn default_persistence_s() -> usize {
    5
}
fn default_n_small() -> usize {
    250
}
fn default_n_large() -> usize {
    1000
}
fn default_lambda_scale() -> f64 {
    2.0
}
fn default_mc_n() -> usize {
    20_000
}

impl Default for PersistenceParams {
    fn default() -> Self {
        PersistenceParams {
            d: default_persistence_d(),
            s: default_persistence_s(),
            signal: 1.0,
            sigma: 1.0,
            n_small: default_n_small(),
            n_large: default_n_large(),
            lambda_scale: default_lambda_scale(),
            mc_n: default_mc_n(),
        }
    }
}

impl PersistenceParams {
    pub fn beta_star(&self) -> DVector<f64> {
        DVector::from_fn(self.d, |j, _| if j < self.s { self.signal } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersistenceReplicate {
    pub gap_small: f64,
    pub gap_small_se: f64,
    pub gap_large: f64,
    pub gap_large_se: f64,
    pub large_smaller: bool,
}

fn gaussian_row(beta: &DVector<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> (DVector<f64>, f64) {
    let x = DVector::from_fn(beta.len(), |_, _| rng.sample(StandardNormal));
    let y = x.dot(beta) + sigma * rng.sample::<f64, _>(StandardNormal);
    (x, y)
}

/// L1-penalized least-squares fit of an independent-design sample of size `n`.
pub fn persistence_fit(p: &PersistenceParams, n: usize, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
    let star = p.beta_star();
    let mut x = DMatrix::zeros(n, p.d);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let (xi, yi) = gaussian_row(&star, p.sigma, rng);
        x.set_row(i, &xi.transpose());
        y[i] = yi;
    }
    let obj = ErmObjective::new(ErmLoss::Quadratic, Dataset::new(x, y)?)?;
    let lambda = p.lambda_scale * p.sigma * (2.0 * (p.d as f64).ln() / n as f64).sqrt();
    let pen = vec![PenaltySpec::new(PenaltyKind::L1, lambda)?; p.d];
    Ok(lqa::fit(&obj, &pen, &LqaConfig::default())?.beta)
}

pub fn persistence_replicate(p: &PersistenceParams, rng: &mut ChaCha8Rng) -> Result<PersistenceReplicate> {
    if p.s > p.d || p.d == 0 {
        return Err(Error::InvalidInput("s: must not exceed d".into()));
    }
    let star = p.beta_star();
    let small = persistence_fit(p, p.n_small, rng)?;
    let large = persistence_fit(p, p.n_large, rng)?;
    let gen = |r: &mut ChaCha8Rng| gaussian_row(&star, p.sigma, r);
    let mc_seed: u64 = rng.random();
    let a = empirical_risk_gap(&small, &star, ErmLoss::Quadratic, gen, p.mc_n, mc_seed)?;
    let b = empirical_risk_gap(&large, &star, ErmLoss::Quadratic, gen, p.mc_n, mc_seed)?;
    Ok(PersistenceReplicate {
        gap_small: a.gap,
        gap_small_se: a.std_error,
        gap_large: b.gap,
        gap_large_se: b.std_error,
        large_smaller: b.gap < a.gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersistenceSummary {
    pub replicates: usize,
    pub fraction_large_smaller: f64,
    pub mean_gap_small: f64,
    pub mean_gap_large: f64,
}

pub fn summarize_persistence(reps: &[PersistenceReplicate]) -> PersistenceSummary {
    PersistenceSummary {
        replicates: reps.len(),
        fraction_large_smaller: rate(reps.iter().map(|r| r.large_smaller)),
        mean_gap_small: mean(reps.iter().map(|r| r.gap_small)),
        mean_gap_large: mean(reps.iter().map(|r| r.gap_large)),
    }
}

// ---------------------------------------------------------------------------
// Thresholding under an orthonormal design

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrthoDesign {
    /// Sylvester–Hadamard matrix with random column signs (`d = n`, `n` a power of two).
    #[default]
    Hadamard,
    /// QR factor of a Gaussian matrix.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoParams {
    pub n: usize,
    /// Number of columns; defaults to `n`.
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_l1")]
    pub penalty: PenaltyKind,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_true")]
    pub use_universal: bool,
    /// True coefficients; defaults to zero.
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    #[serde(default)]
    pub design: OrthoDesign,
}

fn default_l1() -> PenaltyKind {
    PenaltyKind::L1
}

fn default_true() -> bool {
    true
}

/// Signed Sylvester–Hadamard design, `XᵀX = n I`.
pub fn hadamard_design(n: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::InvalidInput(format!("n: Hadamard design needs a power of two, got {n}")));
    }
    let signs: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let h = if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        h * signs[j]
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrthoReplicate {
    pub lambda: f64,
    pub nonzero: usize,
    pub all_zero: bool,
}

pub fn ortho_replicate(p: &OrthoParams, rng: &mut ChaCha8Rng) -> Result<OrthoReplicate> {
    let d = p.d.unwrap_or(p.n);
    let x = match p.design {
        OrthoDesign::Hadamard => {
            if d != p.n {
                return Err(Error::InvalidInput("d: Hadamard design needs d = n".into()));
            }
            hadamard_design(p.n, rng)?
        }
        OrthoDesign::Gaussian => orthonormal_design(p.n, d, rng)?,
    };
    let beta = match &p.beta {
        Some(b) if b.len() != d => return Err(Error::InvalidInput(format!("beta: length {} but d = {d}", b.len()))),
        Some(b) => DVector::from_column_slice(b),
        None => DVector::zeros(d),
    };
    let y = &x * beta + DVector::from_fn(p.n, |_, _| p.sigma * rng.sample::<f64, _>(StandardNormal));
    let z = x.transpose() * y / p.n as f64;
    let universal = p.use_universal.then_some(Universal { n: p.n, sigma: p.sigma });
    let fit = fit_orthonormal(z.as_slice(), p.penalty, p.lambda, universal)?;
    let nonzero = fit.coefficients.iter().filter(|&&c| c != 0.0).count();
    Ok(OrthoReplicate {
        lambda: fit.lambda,
        nonzero,
        all_zero: nonzero == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrthoSummary {
    pub replicates: usize,
    pub lambda: f64,
    pub all_zero_rate: f64,
    pub mean_nonzero: f64,
}

pub fn summarize_ortho(reps: &[OrthoReplicate]) -> OrthoSummary {
    OrthoSummary {
        replicates: reps.len(),
        lambda: reps.first().map_or(f64::NAN, |r| r.lambda),
        all_zero_rate: rate(reps.iter().map(|r| r.all_zero)),
        mean_nonzero: mean(reps.iter().map(|r| r.nonzero as f64)),
    }
}

// ---------------------------------------------------------------------------
// Sparse Cholesky factor of an AR process

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CholeskyParams {
    pub n: usize,
    pub d: usize,
    pub coefficients: Vec<f64>,
    #[serde(default = "default_one")]
    pub innovation_sd: f64,
    #[serde(default = "default_scad")]
    pub penalty: PenaltyKind,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CholeskyReplicate {
    pub off_band_nonzero: usize,
    pub off_band_total: usize,
    pub in_band_nonzero: usize,
    pub in_band_total: usize,
    pub false_positive_rate: f64,
}

pub fn cholesky_replicate(p: &CholeskyParams, rng: &mut ChaCha8Rng) -> Result<CholeskyReplicate> {
    let ar = ArParams {
        n: p.n,
        d: p.d,
        coefficients: p.coefficients.clone(),
        innovation_sd: p.innovation_sd,
    };
    let w = ar_series(&ar, rng)?;
    let truth = ar_phi(&ar);
    let est = cholesky_select(
        &w,
        p.penalty,
        &RowTuning::Gcv(TuneOptions {
            grid_size: p.grid_size,
            ..Default::default()
        }),
    )?;
    let (mut off_nz, mut off_total, mut in_nz, mut in_total) = (0, 0, 0, 0);
    for t in 0..p.d {
        for j in 0..t {
            let nz = est.phi[(t, j)] != 0.0;
            if truth[(t, j)] == 0.0 {
                off_total += 1;
                off_nz += usize::from(nz);
            } else {
                in_total += 1;
                in_nz += usize::from(nz);
            }
        }
    }
    Ok(CholeskyReplicate {
        off_band_nonzero: off_nz,
        off_band_total: off_total,
        in_band_nonzero: in_nz,
        in_band_total: in_total,
        false_positive_rate: if off_total == 0 { 0.0 } else { off_nz as f64 / off_total as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CholeskySummary {
    pub replicates: usize,
    pub off_band_false_positive_rate: f64,
    pub in_band_detection_rate: f64,
}

pub fn summarize_cholesky(reps: &[CholeskyReplicate]) -> CholeskySummary {
    let off: usize = reps.iter().map(|r| r.off_band_nonzero).sum();
    let off_total: usize = reps.iter().map(|r| r.off_band_total).sum();
    let inb: usize = reps.iter().map(|r| r.in_band_nonzero).sum();
    let in_total: usize = reps.iter().map(|r| r.in_band_total).sum();
    CholeskySummary {
        replicates: reps.len(),
        off_band_false_positive_rate: off as f64 / off_total.max(1) as f64,
        in_band_detection_rate: inb as f64 / in_total.max(1) as f64,
    }
}

// ---------------------------------------------------------------------------
// Factor-model covariance against the sample covariance

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorReplicate {
    pub factor_precision_error: f64,
    pub sample_precision_error: f64,
    pub factor_eigen_deviation: f64,
    pub sample_eigen_deviation: f64,
    pub factor_risk_error: f64,
    pub sample_risk_error: f64,
    pub factor_wins_precision: bool,
    pub eigen_ratio: f64,
}

pub fn factor_replicate(p: &FactorParams, rng: &mut ChaCha8Rng) -> Result<FactorReplicate> {
    let sample = factor(p, rng)?;
    let fc = factor_cov(&sample.returns, &sample.factors)?;
    let sc = covariance_n(&sample.returns);
    let xi = DVector::from_element(p.d, 1.0 / p.d as f64);
    let errs = compare_estimators(&sample.sigma_true, &[fc.sigma, sc], &xi)?;
    Ok(FactorReplicate {
        factor_precision_error: errs[0].precision_error,
        sample_precision_error: errs[1].precision_error,
        factor_eigen_deviation: errs[0].max_eigen_deviation,
        sample_eigen_deviation: errs[1].max_eigen_deviation,
        factor_risk_error: errs[0].portfolio_risk_error,
        sample_risk_error: errs[1].portfolio_risk_error,
        factor_wins_precision: errs[0].precision_error < errs[1].precision_error,
        eigen_ratio: errs[0].max_eigen_deviation / errs[1].max_eigen_deviation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorSummary {
    pub replicates: usize,
    pub precision_win_rate: f64,
    /// Fraction of replicates with eigenvalue-deviation ratio in `[1/2, 2]`.
    pub eigen_within_2x_rate: f64,
    pub mean_factor_eigen_deviation: f64,
    pub mean_sample_eigen_deviation: f64,
    pub mean_factor_precision_error: f64,
    pub mean_sample_precision_error: f64,
}

pub fn summarize_factor(reps: &[FactorReplicate]) -> FactorSummary {
    FactorSummary {
        replicates: reps.len(),
        precision_win_rate: rate(reps.iter().map(|r| r.factor_wins_precision)),
        eigen_within_2x_rate: rate(reps.iter().map(|r| (0.5..=2.0).contains(&r.eigen_ratio))),
        mean_factor_eigen_deviation: mean(reps.iter().map(|r| r.factor_eigen_deviation)),
        mean_sample_eigen_deviation: mean(reps.iter().map(|r| r.sample_eigen_deviation)),
        mean_factor_precision_error: mean(reps.iter().map(|r| r.factor_precision_error)),
        mean_sample_precision_error: mean(reps.iter().map(|r| r.sample_precision_error)),
    }
}

// ---------------------------------------------------------------------------
// Configuration and report files

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentKind {
    Oracle(OracleParams),
    Sandwich(OracleParams),
    Cox(CoxParams),
    Persistence(PersistenceParams),
    Orthonormal(OrthoParams),
    Cholesky(CholeskyParams),
    Factor(FactorParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replicates: usize,
    #[serde(flatten)]
    pub kind: ExperimentKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub replicates: serde_json::Value,
    pub summary: serde_json::Value,
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

/// Runs every replicate and assembles the per-replicate and summary reports.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let (seed, n) = (config.seed, config.replicates);
    let (reps, summary) = match &config.kind {
        ExperimentKind::Oracle(p) => {
            let r = run_replicates(seed, n, |rng| oracle_replicate(p, rng))?;
            (to_value(&r)?, to_value(&summarize_oracle(&r))?)
        }
        ExperimentKind::Sandwich(p) => {
            let r = run_replicates(seed, n, |rng| oracle_replicate(p, rng))?;
            (to_value(&r)?, json!({ "replicates": r.len(), "coordinates": summarize_sandwich(p, &r) }))
        }
        ExperimentKind::Cox(p) => {
            let r = run_replicates(seed, n, |rng| cox_replicate(p, rng))?;
            (to_value(&r)?, to_value(&summarize_cox(&r))?)
        }
        ExperimentKind::Persistence(p) => {
            let r = run_replicates(seed, n, |rng| persistence_replicate(p, rng))?;
            (to_value(&r)?, to_value(&summarize_persistence(&r))?)
        }
        ExperimentKind::Orthonormal(p) => {
            let r = run_replicates(seed, n, |rng| ortho_replicate(p, rng))?;
            (to_value(&r)?, to_value(&summarize_ortho(&r))?)
        }
        ExperimentKind::Cholesky(p) => {
            let r = run_replicates(seed, n, |rng| cholesky_replicate(p, rng))?;
            (to_value(&r)?, to_value(&summarize_cholesky(&r))?)
        }
        ExperimentKind::Factor(p) => {
            let r = run_replicates(seed, n, |rng| factor_replicate(p, rng))?;
            (to_value(&r)?, to_value(&summarize_factor(&r))?)
        }
    };
    let header = json!({ "config": config, "rng": RNG_NAME });
    Ok(ExperimentReport {
        replicates: json!({ "run": header, "replicates": reps }),
        summary: json!({ "run": header, "summary": summary }),
    })
}

/// Writes `replicates.json` and `summary.json` into `dir`.
pub fn run_experiment(config: &ExperimentConfig, dir: &Path) -> Result<ExperimentReport> {
    let report = run(config)?;
    write_json(&dir.join("replicates.json"), &report.replicates)?;
    write_json(&dir.join("summary.json"), &report.summary)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hadamard_is_orthonormal() {
        let x = hadamard_design(16, &mut rng_for(1, 0)).unwrap();
        assert!((x.transpose() * &x / 16.0 - DMatrix::<f64>::identity(16, 16)).amax() < 1e-15);
        assert!(hadamard_design(12, &mut rng_for(1, 0)).is_err());
    }

    #[test]
    fn config_parses_and_reports_are_reproducible() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"experiment":"oracle","seed":3,"replicates":4,"n":60,"beta":[2.0,0.0,1.0]}"#,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&cfg, dir.path()).unwrap();
        let first = std::fs::read(dir.path().join("summary.json")).unwrap();
        let reps = std::fs::read(dir.path().join("replicates.json")).unwrap();
        run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(first, std::fs::read(dir.path().join("summary.json")).unwrap());
        assert_eq!(reps, std::fs::read(dir.path().join("replicates.json")).unwrap());
        let summary: serde_json::Value = serde_json::from_slice(&first).unwrap();
        let keys: Vec<&String> = summary["summary"].as_object().unwrap().keys().collect();
        assert_eq!(keys, vec!["median_oracle_distance", "replicates", "support_recovery_rate"]);
    }

    #[test]
    fn missing_seed_is_rejected() {
        let r: std::result::Result<ExperimentConfig, _> =
            serde_json::from_str(r#"{"experiment":"factor","replicates":2,"n":10,"d":5,"k":1}"#);
        assert!(r.is_err());
    }

    #[test]
    fn zero_replicates_rejected() {
        let cfg = ExperimentConfig {
            seed: 1,
            replicates: 0,
            kind: ExperimentKind::Factor(FactorParams { n: 20, d: 5, k: 1, idio_sd: 1.0 }),
        };
        assert!(run(&cfg).is_err());
    }
}
