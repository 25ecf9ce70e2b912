//! Local quadratic approximation (LQA) for penalized likelihoods.
//!
//! Maximizes `F(β) = ℓ(β)/n − Σ_j p_{λ_j}(|β_j|)` where `ℓ` is the un-averaged
//! log-likelihood. Each iteration replaces the penalty near the current iterate
//! by `½ Σ_λ β²` with `Σ_λ = diag{p'(|β_j|)/|β_j|}` and takes one Newton step on
//! the resulting smooth objective. Penalized coordinates that fall below the
//! clamp threshold leave the working system for the rest of the run.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::likelihoods::Likelihood;
use crate::linalg::{select_entries, select_rows_cols, solve_spd_jittered};
use crate::penalty::{total_penalty, PenaltySpec};

/// Largest number of penalized coordinates for which an entropy-penalized fit
/// enumerates every subset.
pub const MAX_EXHAUSTIVE: usize = 15;

const MAX_HALVINGS: usize = 30;

/// Starting point of the iteration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Unpenalized maximum likelihood, replaced by a ridge-stabilized Newton
    /// step from the origin when the MLE does not exist.
    #[default]
    Mle,
    /// The ridge-stabilized Newton step from the origin.
    Zeros,
    User(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqaConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Zero-clamp threshold; `None` means `1e-6 · max_j |β⁰_j|`.
    pub clamp_tau: Option<f64>,
    pub init: Init,
}

impl Default for LqaConfig {
    fn default() -> Self {
        LqaConfig {
            tol: 1e-8,
            max_iter: 200,
            clamp_tau: None,
            init: Init::Mle,
        }
    }
}

impl LqaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        if let Some(tau) = self.clamp_tau {
            if !(tau > 0.0) {
                return Err(Error::InvalidInput(format!("clamp_tau must be positive, got {tau}")));
            }
        }
        Ok(())
    }
}

/// How the starting point was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Mle,
    /// The MLE was requested but does not exist.
    MleFallback,
    Zeros,
    User,
    /// Entropy penalty solved by subset enumeration.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: DVector<f64>,
    /// Indices with `β̂_j ≠ 0`, ascending.
    pub active_set: Vec<usize>,
    /// `ℓ(β̂)/n − Σ p(|β̂_j|)`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `p'(|β̂_j|)/|β̂_j|` on active penalized coordinates, zero elsewhere.
    pub sigma_lambda: DVector<f64>,
    /// Objective after every iteration, starting with the initial point.
    pub trace: Vec<f64>,
    pub start: StartKind,
    pub penalty: Vec<PenaltySpec>,
}

impl FitResult {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "beta": self.beta.as_slice(),
            "active_set": self.active_set,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "sigma_lambda": self.sigma_lambda.as_slice(),
            "start": self.start,
            "trace": self.trace,
        })
    }
}

/// `ℓ(β)/n − Σ_j p_{λ_j}(|β_j|)`.
pub fn penalized_objective(lik: &dyn Likelihood, penalty: &[PenaltySpec], beta: &DVector<f64>) -> f64 {
    lik.loglik(beta) / lik.n_obs() as f64 - total_penalty(penalty, beta.as_slice())
}

/// Residual of the penalized likelihood equation on the active set.
#[derive(Debug, Clone, PartialEq)]
pub struct Stationarity {
    /// Aligned with `FitResult::active_set`.
    pub residual: Vec<f64>,
    pub max_norm: f64,
}

/// `∂ℓ/∂β_j − n p'(|β̂_j|) sgn(β̂_j)` for each active coordinate.
pub fn stationarity_residual(fit: &FitResult, lik: &dyn Likelihood, penalty: &[PenaltySpec]) -> Result<Stationarity> {
    check_dims(lik, penalty)?;
    if fit.beta.len() != lik.dim() {
        return Err(Error::Dimension(format!(
            "fit has {} coefficients, objective has {}",
            fit.beta.len(),
            lik.dim()
        )));
    }
    let g = lik.gradient(&fit.beta);
    let n = lik.n_obs() as f64;
    let residual: Vec<f64> = fit
        .active_set
        .iter()
        .map(|&j| g[j] - n * penalty[j].deriv_at(fit.beta[j].abs()) * fit.beta[j].signum())
        .collect();
    let max_norm = residual.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    Ok(Stationarity { residual, max_norm })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PenaltyDiagnostics {
    /// `max p'(|β_j|)` over nonzero coordinates.
    pub a_n: f64,
    /// `max |p''(|β_j|)|` over nonzero coordinates.
    pub b_n: f64,
}

pub fn penalty_diagnostics(penalty: &[PenaltySpec], beta: &[f64]) -> Result<PenaltyDiagnostics> {
    if penalty.len() != beta.len() {
        return Err(Error::Dimension(format!(
            "{} penalties for {} coefficients",
            penalty.len(),
            beta.len()
        )));
    }
    let mut any = false;
    let mut a_n = 0.0_f64;
    let mut b_n = 0.0_f64;
    for (p, &b) in penalty.iter().zip(beta) {
        if b == 0.0 {
            continue;
        }
        any = true;
        a_n = a_n.max(p.deriv(b.abs())?);
        b_n = b_n.max(p.second_deriv(b.abs())?.abs());
    }
    if !any {
        return Err(Error::InvalidInput("penalty diagnostics need at least one nonzero coefficient".into()));
    }
    Ok(PenaltyDiagnostics { a_n, b_n })
}

/// Unpenalized maximum likelihood by damped Newton iterations.
pub fn mle(lik: &dyn Likelihood) -> Result<DVector<f64>> {
    let cols: Vec<usize> = (0..lik.dim()).collect();
    newton_mle(lik, &cols, DVector::zeros(lik.dim()))
}

/// Maximizes `ℓ` over the coordinates in `cols`, holding the others at zero.
pub(crate) fn newton_mle(lik: &dyn Likelihood, cols: &[usize], start: DVector<f64>) -> Result<DVector<f64>> {
    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 100;
    let n = lik.n_obs() as f64;
    let mut beta = start;
    for &j in (0..lik.dim()).filter(|j| !cols.contains(j)).collect::<Vec<_>>().iter() {
        beta[j] = 0.0;
    }
    if cols.is_empty() {
        return Ok(beta);
    }
    let mut value = lik.loglik(&beta);
    let mut last_change = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let (g, h) = lik.grad_hess(&beta);
        let gs = select_entries(&g, cols);
        let scale = 1.0 + beta.amax();
        if gs.amax() <= TOL * n && last_change <= 1e-8 * scale {
            return Ok(beta);
        }
        let info = -select_rows_cols(&h, cols);
        let chol = info.cholesky().ok_or_else(|| {
            Error::MleUnavailable("observed information is singular on the requested coordinates".into())
        })?;
        let dir = chol.solve(&gs);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..=MAX_HALVINGS {
            let mut cand = beta.clone();
            for (k, &j) in cols.iter().enumerate() {
                cand[j] += t * dir[k];
            }
            let v = lik.loglik(&cand);
            if v.is_finite() && v >= value - 1e-14 * (1.0 + value.abs()) {
                last_change = (&cand - &beta).amax();
                beta = cand;
                value = v;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            if gs.amax() <= 1e-7 * n {
                return Ok(beta);
            }
            return Err(Error::MleUnavailable("Newton iterations stalled".into()));
        }
        if beta.amax() > 1e8 {
            return Err(Error::MleUnavailable("coefficients diverge".into()));
        }
    }
    Err(Error::MleUnavailable(format!("Newton iterations did not converge in {MAX_ITER} steps")))
}

fn check_dims(lik: &dyn Likelihood, penalty: &[PenaltySpec]) -> Result<()> {
    if penalty.len() != lik.dim() {
        return Err(Error::Dimension(format!(
            "{} penalties for {} coefficients",
            penalty.len(),
            lik.dim()
        )));
    }
    Ok(())
}

/// Penalized maximum likelihood by LQA.
///
/// When every penalized coordinate carries the entropy penalty and there are at
/// most [`MAX_EXHAUSTIVE`] of them, all subsets are enumerated instead.
pub fn fit(lik: &dyn Likelihood, penalty: &[PenaltySpec], config: &LqaConfig) -> Result<FitResult> {
    config.validate()?;
    check_dims(lik, penalty)?;
    let penalized: Vec<usize> = (0..penalty.len()).filter(|&j| penalty[j].is_penalized()).collect();
    if !penalized.is_empty()
        && penalized.len() <= MAX_EXHAUSTIVE
        && penalized.iter().all(|&j| penalty[j].is_entropy())
    {
        return fit_exhaustive(lik, penalty, &penalized);
    }
    Solver { lik, penalty, config }.run()
}

fn fit_exhaustive(lik: &dyn Likelihood, penalty: &[PenaltySpec], penalized: &[usize]) -> Result<FitResult> {
    let d = lik.dim();
    let free: Vec<usize> = (0..d).filter(|j| !penalized.contains(j)).collect();
    let mut best: Option<(f64, u32, DVector<f64>)> = None;
    let mut all_converged = true;
    for mask in 0u32..(1u32 << penalized.len()) {
        let mut cols = free.clone();
        cols.extend(penalized.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &j)| j));
        cols.sort_unstable();
        let beta = match newton_mle(lik, &cols, DVector::zeros(d)) {
            Ok(b) => b,
            Err(Error::MleUnavailable(_)) | Err(Error::Singular(_)) => {
                all_converged = false;
                continue;
            }
            Err(e) => return Err(e),
        };
        let value = penalized_objective(lik, penalty, &beta);
        if !value.is_finite() {
            continue;
        }
        let size = mask.count_ones();
        let better = match &best {
            None => true,
            Some((bv, bs, _)) => {
                let slack = 1e-12 * (1.0 + bv.abs());
                value > bv + slack || (value >= bv - slack && size < *bs)
            }
        };
        if better {
            best = Some((value, size, beta));
        }
    }
    let (objective, _, beta) =
        best.ok_or_else(|| Error::MleUnavailable("no candidate subset has a finite maximum likelihood fit".into()))?;
    let active_set: Vec<usize> = (0..d).filter(|&j| beta[j] != 0.0).collect();
    Ok(FitResult {
        sigma_lambda: DVector::zeros(d),
        active_set,
        objective,
        iterations: 1usize << penalized.len(),
        converged: all_converged || beta.iter().all(|b| b.is_finite()),
        trace: vec![objective],
        start: StartKind::Exhaustive,
        penalty: penalty.to_vec(),
        beta,
    })
}

struct Solver<'a> {
    lik: &'a dyn Likelihood,
    penalty: &'a [PenaltySpec],
    config: &'a LqaConfig,
}

impl Solver<'_> {
    fn n(&self) -> f64 {
        self.lik.n_obs() as f64
    }

    fn objective(&self, beta: &DVector<f64>) -> f64 {
        let v = penalized_objective(self.lik, self.penalty, beta);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    fn accepts(new: f64, old: f64) -> bool {
        new >= old - 1e-14 * (1.0 + old.abs())
    }

    fn sigma(&self, j: usize, b: f64) -> f64 {
        let p = &self.penalty[j];
        if !p.is_penalized() {
            return 0.0;
        }
        p.deriv_at(b.abs()) / b.abs()
    }

    /// Penalties flat at the origin never produce exact zeros, so only an exact
    /// zero is removed for them.
    fn clamps(&self, j: usize, b: f64, tau: f64) -> bool {
        let p = &self.penalty[j];
        if !p.is_penalized() {
            return false;
        }
        if p.deriv_at_zero_plus() > 0.0 {
            b.abs() < tau
        } else {
            b == 0.0
        }
    }

    fn start(&self) -> Result<(DVector<f64>, StartKind)> {
        let d = self.lik.dim();
        match &self.config.init {
            Init::User(b) => {
                if b.len() != d {
                    return Err(Error::Dimension(format!("initial value has length {}, expected {d}", b.len())));
                }
                if b.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput("initial value is not finite".into()));
                }
                Ok((DVector::from_column_slice(b), StartKind::User))
            }
            Init::Zeros => Ok((self.ridge_step()?, StartKind::Zeros)),
            Init::Mle => match mle(self.lik) {
                Ok(b) => Ok((b, StartKind::Mle)),
                Err(Error::MleUnavailable(_)) | Err(Error::Singular(_)) => {
                    Ok((self.ridge_step()?, StartKind::MleFallback))
                }
                Err(e) => Err(e),
            },
        }
    }

    /// One Newton step from the origin with a small ridge, so that the LQA
    /// weights are finite at the start.
    fn ridge_step(&self) -> Result<DVector<f64>> {
        let d = self.lik.dim();
        let zero = DVector::zeros(d);
        let (g, h) = self.lik.grad_hess(&zero);
        let mut a = -h / self.n();
        let mu = 1e-3 * a.diagonal().amax().max(1.0);
        for i in 0..d {
            a[(i, i)] += mu;
        }
        solve_spd_jittered(&a, &(g / self.n()))
    }

    fn residual(&self, beta: &DVector<f64>, g: &DVector<f64>, active: &[usize]) -> f64 {
        let n = self.n();
        active.iter().fold(0.0_f64, |m, &j| {
            let r = g[j] - n * self.penalty[j].deriv_at(beta[j].abs()) * beta[j].signum();
            m.max(r.abs())
        })
    }

    fn lqa_direction(&self, beta: &DVector<f64>, act: &[usize], g: &DVector<f64>, h: &DMatrix<f64>) -> Result<DVector<f64>> {
        let n = self.n();
        let mut a = -select_rows_cols(h, act) / n;
        let mut b = select_entries(g, act) / n;
        for (i, &j) in act.iter().enumerate() {
            let s = self.sigma(j, beta[j]);
            a[(i, i)] += s;
            b[i] -= s * beta[j];
        }
        solve_spd_jittered(&a, &b)
    }

    /// Full Newton step on `F` itself, when the curvature allows it.
    fn newton_direction(&self, beta: &DVector<f64>, act: &[usize], g: &DVector<f64>, h: &DMatrix<f64>) -> Option<DVector<f64>> {
        let n = self.n();
        let mut a = -select_rows_cols(h, act) / n;
        let mut b = select_entries(g, act) / n;
        for (i, &j) in act.iter().enumerate() {
            let p = &self.penalty[j];
            if p.is_penalized() {
                let m = beta[j].abs();
                a[(i, i)] += p.curvature_at(m);
                b[i] -= p.deriv_at(m) * beta[j].signum();
            }
        }
        a.cholesky().map(|c| c.solve(&b))
    }

    fn apply(beta: &DVector<f64>, act: &[usize], dir: &DVector<f64>, t: f64) -> DVector<f64> {
        let mut out = beta.clone();
        for (k, &j) in act.iter().enumerate() {
            out[j] += t * dir[k];
        }
        out
    }

    /// Zeroes shrinking coordinates whose zero value already satisfies the
    /// first-order condition `|∂ℓ/∂β_j| / n < p'(0+)` and does not lower the
    /// objective when applied to that coordinate alone.
    fn kkt_zero(&self, prev: &DVector<f64>, cand: &mut DVector<f64>, active: &mut [bool], value: &mut f64) {
        let n = self.n();
        let zero_at = |set: &[usize]| {
            let mut z = cand.clone();
            for &j in set {
                z[j] = 0.0;
            }
            z
        };
        let zero_one = |j: usize| {
            let mut z = cand.clone();
            z[j] = 0.0;
            z
        };
        let mut set: Vec<usize> = (0..cand.len())
            .filter(|&j| {
                active[j]
                    && self.penalty[j].is_penalized()
                    && self.penalty[j].deriv_at_zero_plus().is_finite()
                    && cand[j].abs() < prev[j].abs()
                && Self::accepts(self.objective(&zero_one(j)), *value)
            })
            .collect();
        for _ in 0..5 {
            if set.is_empty() {
                return;
            }
            let g = self.lik.gradient(&zero_at(&set));
            let before = set.len();
            set.retain(|&j| g[j].abs() / n < self.penalty[j].deriv_at_zero_plus());
            if set.len() == before {
                let zeroed = zero_at(&set);
                let v = self.objective(&zeroed);
                if Self::accepts(v, *value) {
                    for &j in &set {
                        active[j] = false;
                    }
                    *cand = zeroed;
                    *value = v;
                }
                return;
            }
        }
    }

    /// After convergence, drops any single penalized coordinate whose removal
    /// does not lower the objective. Smallest magnitudes are tried first.
    fn prune(&self, beta: &mut DVector<f64>, active: &mut [bool], value: &mut f64) -> bool {
        let mut order: Vec<usize> = (0..beta.len()).filter(|&j| active[j] && self.penalty[j].is_penalized()).collect();
        order.sort_by(|&a, &b| beta[a].abs().total_cmp(&beta[b].abs()));
        let mut pruned = false;
        for j in order {
            let mut cand = beta.clone();
            cand[j] = 0.0;
            let v = self.objective(&cand);
            if v >= *value {
                *beta = cand;
                *value = v;
                active[j] = false;
                pruned = true;
            }
        }
        pruned
    }

    fn run(&self) -> Result<FitResult> {
        let d = self.lik.dim();
        let tol = self.config.tol;
        let n = self.n();
        let (mut beta, start) = self.start()?;
        let scale = beta.amax();
        let tau = self.config.clamp_tau.unwrap_or(if scale > 0.0 { 1e-6 * scale } else { 1e-12 });

        let mut active = vec![true; d];
        for j in 0..d {
            if self.clamps(j, beta[j], tau) {
                beta[j] = 0.0;
                active[j] = false;
            }
        }
        let mut value = self.objective(&beta);
        let mut trace = vec![value];
        let mut iterations = 0;
        let mut last_change = f64::INFINITY;
        let converged;

        loop {
            let act: Vec<usize> = (0..d).filter(|&j| active[j]).collect();
            let (g, h) = if act.is_empty() {
                (DVector::zeros(d), DMatrix::zeros(d, d))
            } else {
                self.lik.grad_hess(&beta)
            };
            let resid = self.residual(&beta, &g, &act);
            if act.is_empty() || (last_change <= tol && resid <= tol * n) {
                if self.prune(&mut beta, &mut active, &mut value) {
                    trace.push(value);
                    last_change = f64::INFINITY;
                    continue;
                }
                converged = true;
                break;
            }
            if iterations >= self.config.max_iter {
                converged = false;
                break;
            }
            iterations += 1;

            let dir = self.lqa_direction(&beta, &act, &g, &h)?;
            let mut best: Option<(DVector<f64>, f64)> = None;
            let mut t = 1.0;
            for _ in 0..=MAX_HALVINGS {
                let cand = Self::apply(&beta, &act, &dir, t);
                let v = self.objective(&cand);
                if Self::accepts(v, value) {
                    best = Some((cand, v));
                    break;
                }
                t *= 0.5;
            }
            if let Some(nd) = self.newton_direction(&beta, &act, &g, &h) {
                let cand = Self::apply(&beta, &act, &nd, 1.0);
                let keeps_signs = act
                    .iter()
                    .all(|&j| !self.penalty[j].is_penalized() || cand[j].signum() == beta[j].signum());
                if keeps_signs {
                    let v = self.objective(&cand);
                    let floor = best.as_ref().map_or(value, |b| b.1);
                    if Self::accepts(v, floor) && (best.is_none() || v >= floor) {
                        best = Some((cand, v));
                    }
                }
            }
            let (mut cand, mut cand_value) = best.unwrap_or_else(|| (beta.clone(), value));

            self.kkt_zero(&beta, &mut cand, &mut active, &mut cand_value);
            let mut clamped = false;
            for j in 0..d {
                if active[j] && self.clamps(j, cand[j], tau) {
                    cand[j] = 0.0;
                    active[j] = false;
                    clamped = true;
                }
            }
            if clamped {
                cand_value = self.objective(&cand);
            }
            last_change = (&cand - &beta).amax();
            let stalled = last_change == 0.0;
            beta = cand;
            value = cand_value;
            trace.push(value);
            if stalled && resid > tol * n {
                converged = false;
                break;
            }
        }

        let active_set: Vec<usize> = (0..d).filter(|&j| active[j] && beta[j] != 0.0).collect();
        let sigma_lambda = DVector::from_fn(d, |j, _| {
            if active_set.contains(&j) {
                self.sigma(j, beta[j])
            } else {
                0.0
            }
        });
        Ok(FitResult {
            beta,
            active_set,
            objective: value,
            iterations,
            converged,
            sigma_lambda,
            trace,
            start,
            penalty: self.penalty.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihoods::{Dataset, GlmFamily, GlmObjective};
    use crate::penalty::{PenaltyKind, RidgeScale};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(x: DMatrix<f64>, y: DVector<f64>) -> GlmObjective {
        GlmObjective::new(GlmFamily::Gaussian, Dataset::new(x, y).unwrap()).unwrap()
    }

    /// `n × d` design with `XᵀX = n I`.
    fn orthonormal_design(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = raw.qr().q();
        q * (n as f64).sqrt()
    }

    fn kinds() -> Vec<PenaltyKind> {
        vec![
            PenaltyKind::scad(),
            PenaltyKind::L1,
            PenaltyKind::ridge(),
            PenaltyKind::L2 { scale: RidgeScale::Half },
            PenaltyKind::Hard,
            PenaltyKind::Entropy,
            PenaltyKind::Bridge { q: 0.5 },
            PenaltyKind::Bridge { q: 1.5 },
        ]
    }

    fn uniform(kind: PenaltyKind, lambda: f64, d: usize) -> Vec<PenaltySpec> {
        vec![PenaltySpec::new(kind, lambda).unwrap(); d]
    }

    #[test]
    fn orthonormal_fit_matches_thresholding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, d) = (64, 8);
        let x = orthonormal_design(&mut rng, n, d);
        let beta = DVector::from_vec(vec![3.0, -1.5, 0.8, 0.0, 0.3, -0.1, 2.0, 0.0]);
        let noise = DVector::from_fn(n, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
        let y = &x * beta + noise;
        let z = x.transpose() * &y / n as f64;
        let lik = gaussian(x, y);
        for kind in kinds() {
            for &lam in &[0.2, 0.6, 1.1] {
                let pen = uniform(kind, lam, d);
                let f = fit(&lik, &pen, &LqaConfig::default()).unwrap();
                assert!(f.converged, "{kind:?} λ={lam}");
                for j in 0..d {
                    let expect = pen[j].threshold(z[j]);
                    assert!((f.beta[j] - expect).abs() < 1e-6, "{kind:?} λ={lam} j={j}: {} vs {expect}", f.beta[j]);
                }
            }
        }
    }

    #[test]
    fn hard_keeps_coefficient_beyond_threshold() {
        // Coefficients just above √2 λ must survive batched zeroing of their
        // neighbours.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, d) = (256, 32);
        let x = orthonormal_design(&mut rng, n, d);
        let beta = DVector::from_fn(d, |j, _| -1.5 + 3.0 * j as f64 / (d - 1) as f64);
        let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &x * beta + noise;
        let z = x.transpose() * &y / n as f64;
        let lik = gaussian(x, y);
        for &lam in &[0.4, 0.6, 0.8] {
            let pen = uniform(PenaltyKind::Hard, lam, d);
            let f = fit(&lik, &pen, &LqaConfig::default()).unwrap();
            for j in 0..d {
                assert!((f.beta[j] - pen[j].threshold(z[j])).abs() < 1e-6, "λ={lam} j={j}");
            }
        }
    }

    #[test]
    fn zero_response_gives_zero_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
        let lik = gaussian(x, DVector::zeros(30));
        for kind in kinds() {
            let f = fit(&lik, &uniform(kind, 0.5, 4), &LqaConfig::default()).unwrap();
            assert!(f.beta.iter().all(|&b| b == 0.0), "{kind:?}");
            assert!(f.active_set.is_empty());
        }
    }

    #[test]
    fn entropy_two_columns_agrees_with_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| 0.6 * x[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
        let lik = gaussian(x.clone(), y.clone());
        for &lam in &[0.05, 0.3, 0.6, 1.2] {
            let f = fit(&lik, &uniform(PenaltyKind::Entropy, lam, 2), &LqaConfig::default()).unwrap();
            let mut best = (f64::INFINITY, vec![]);
            for subset in [vec![], vec![0], vec![1], vec![0, 1]] {
                let xs = crate::linalg::select_columns(&x, &subset);
                let rss = crate::linalg::least_squares(&xs, &y).unwrap().1;
                let score = rss / (2.0 * n as f64) + lam * lam * subset.len() as f64 / 2.0;
                if score < best.0 {
                    best = (score, subset);
                }
            }
            assert_eq!(f.active_set, best.1, "λ={lam}");
        }
    }

    #[test]
    fn unpenalized_residual_is_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(50, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(50, |_, _| rng.random_range(-1.0..1.0));
        let lik = gaussian(x.clone(), y.clone());
        let pen = vec![PenaltySpec::unpenalized(PenaltyKind::scad()); 3];
        let f = fit(&lik, &pen, &LqaConfig::default()).unwrap();
        let st = stationarity_residual(&f, &lik, &pen).unwrap();
        let ne = x.transpose() * (&y - &x * &f.beta);
        for (k, &j) in f.active_set.iter().enumerate() {
            assert!((st.residual[k] - ne[j]).abs() < 1e-10);
        }
        assert!(st.max_norm < 1e-8 * 50.0);
    }

    #[test]
    fn perturbed_residual_grows_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(80, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(80, |i, _| 2.0 * x[(i, 0)] - x[(i, 2)] + 0.1 * rng.random_range(-1.0..1.0));
        let lik = gaussian(x, y);
        let pen = uniform(PenaltyKind::L1, 0.01, 3);
        let mut f = fit(&lik, &pen, &LqaConfig::default()).unwrap();
        assert!(f.converged);
        let base = f.beta.clone();
        let mut norms = vec![];
        for &eps in &[1e-4, 2e-4, 4e-4] {
            f.beta = &base + DVector::from_element(3, eps);
            norms.push(stationarity_residual(&f, &lik, &pen).unwrap().max_norm);
        }
        assert!((norms[1] / norms[0] - 2.0).abs() < 0.05);
        assert!((norms[2] / norms[1] - 2.0).abs() < 0.05);
    }

    #[test]
    fn logistic_separation_falls_back() {
        let x = DMatrix::from_column_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let lik = GlmObjective::new(GlmFamily::Logistic, Dataset::new(x, y).unwrap()).unwrap();
        assert!(matches!(mle(&lik), Err(Error::MleUnavailable(_))));
        let f = fit(&lik, &uniform(PenaltyKind::ridge(), 0.05, 1), &LqaConfig::default()).unwrap();
        assert_eq!(f.start, StartKind::MleFallback);
        assert!(f.converged);
        assert!(f.beta[0] > 0.0 && f.beta[0].is_finite());
    }

    #[test]
    fn diagnostics_examples() {
        let scad = PenaltySpec::new(PenaltyKind::scad(), 1.0).unwrap();
        let d = penalty_diagnostics(&[scad, scad], &[2.0, 5.0]).unwrap();
        assert!((d.a_n - 1.7 / 2.7).abs() < 1e-9);
        assert!((d.b_n - 1.0 / 2.7).abs() < 1e-6);
        let flat = penalty_diagnostics(&[scad, scad], &[4.0, -5.0]).unwrap();
        assert_eq!((flat.a_n, flat.b_n), (0.0, 0.0));
        let l1 = PenaltySpec::new(PenaltyKind::L1, 0.1).unwrap();
        assert!((penalty_diagnostics(&[l1, l1], &[0.3, -7.0]).unwrap().a_n - 0.1).abs() < 1e-15);
        assert!(penalty_diagnostics(&[l1], &[0.0]).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = LqaConfig { tol: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = LqaConfig { max_iter: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = LqaConfig { clamp_tau: Some(-1.0), ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn penalty_length_mismatch() {
        let lik = gaussian(DMatrix::identity(3, 2), DVector::zeros(3));
        assert!(matches!(fit(&lik, &uniform(PenaltyKind::L1, 0.1, 3), &LqaConfig::default()), Err(Error::Dimension(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn monotone_ascent_and_stationarity(seed in 0u64..100_000, lam in 0.01f64..0.6, which in 0usize..8, family in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, d) = (60, 5);
            let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
            let beta = DVector::from_vec(vec![1.0, 0.0, -0.7, 0.0, 0.3]);
            let eta = &x * &beta;
            let fam = [GlmFamily::Gaussian, GlmFamily::Logistic, GlmFamily::Poisson][family];
            let y = DVector::from_fn(n, |i, _| match fam {
                GlmFamily::Gaussian => eta[i] + 0.5 * rng.sample::<f64, _>(StandardNormal),
                GlmFamily::Logistic => f64::from(u8::from(rng.random_bool(crate::likelihoods::logistic(eta[i])))),
                GlmFamily::Poisson => rng.sample(rand_distr::Poisson::new(eta[i].exp()).unwrap()),
            });
            let lik = GlmObjective::new(fam, Dataset::new(x, y).unwrap()).unwrap();
            let kind = kinds()[which];
            let pen = uniform(kind, lam, d);
            let f = fit(&lik, &pen, &LqaConfig::default()).unwrap();
            for w in f.trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-10, "{kind:?}: {} then {}", w[0], w[1]);
            }
            if f.converged {
                let st = stationarity_residual(&f, &lik, &pen).unwrap();
                prop_assert!(st.max_norm <= 1e-6 * n as f64, "{kind:?}: residual {}", st.max_norm);
            }
            for j in 0..d {
                prop_assert_eq!(f.active_set.contains(&j), f.beta[j] != 0.0);
            }
        }
    }
}
