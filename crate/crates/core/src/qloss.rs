//! Losses built from a concave function `q`, penalized empirical risk
//! minimization and a Monte Carlo excess-risk estimate.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihoods::{Dataset, Likelihood};
use crate::lqa::{self, FitResult, LqaConfig};
use crate::penalty::{total_penalty, PenaltySpec};

/// Concave generators of the q-class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QKind {
    /// `q(m) = ½ min{1 − m, 1 + m}`.
    Misclassification,
    /// `q(m) = ¼ min{1 − m, 1 + m}`.
    Hinge,
    /// `q(m) = √(1 − m²)` on `|m| < 1`.
    Exponential,
    /// `q(m) = c m − m²`.
    Quadratic { c: f64 },
}

/// `ℓ(y, m) = q(m) − q(y) − q'(m)(m − y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QLoss {
    kind: QKind,
}

pub fn make_q_loss(kind: QKind) -> QLoss {
    QLoss { kind }
}

impl QLoss {
    pub fn kind(&self) -> QKind {
        self.kind
    }

    fn check(&self, m: f64) -> Result<()> {
        if !m.is_finite() {
            return Err(Error::Domain(format!("q evaluated at {m}")));
        }
        if matches!(self.kind, QKind::Exponential) && m.abs() >= 1.0 {
            return Err(Error::Domain(format!("exponential q needs |m| < 1, got {m}")));
        }
        Ok(())
    }

    pub fn q(&self, m: f64) -> Result<f64> {
        self.check(m)?;
        Ok(match self.kind {
            QKind::Misclassification => 0.5 * (1.0 - m).min(1.0 + m),
            QKind::Hinge => 0.25 * (1.0 - m).min(1.0 + m),
            QKind::Exponential => (1.0 - m * m).sqrt(),
            QKind::Quadratic { c } => c * m - m * m,
        })
    }

    /// Derivative of `q`; at the kink `m = 0` the two one-sided values are averaged.
    pub fn q_prime(&self, m: f64) -> Result<f64> {
        self.check(m)?;
        let kink = |slope: f64| {
            if m == 0.0 {
                0.0
            } else {
                -slope * m.signum()
            }
        };
        Ok(match self.kind {
            QKind::Misclassification => kink(0.5),
            QKind::Hinge => kink(0.25),
            QKind::Exponential => -m / (1.0 - m * m).sqrt(),
            QKind::Quadratic { c } => c - 2.0 * m,
        })
    }

    /// Loss of prediction `m` for response `y`.
    ///
    /// For the exponential generator the label `y = ±1` sits on the boundary of
    /// the domain where `q(±1) = 0`.
    pub fn loss(&self, y: f64, m: f64) -> Result<f64> {
        let qy = match self.kind {
            QKind::Exponential if y.abs() == 1.0 => 0.0,
            _ => self.q(y)?,
        };
        Ok(self.q(m)? - qy - self.q_prime(m)? * (m - y))
    }
}

/// Loss minimized by [`penalized_erm_fit`], as a function of the linear
/// predictor `η = xᵀβ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErmLoss {
    /// `(y − η)²`.
    Quadratic,
    /// `exp(−yη)`, the exponential q-loss at `m = tanh η`.
    Exponential,
    /// Huber-smoothed `[1 − yη]₊` with smoothing width `delta`.
    Hinge { delta: f64 },
}

pub const DEFAULT_HINGE_DELTA: f64 = 1e-3;

impl ErmLoss {
    pub fn hinge() -> Self {
        ErmLoss::Hinge {
            delta: DEFAULT_HINGE_DELTA,
        }
    }

    fn validate(&self) -> Result<()> {
        if let ErmLoss::Hinge { delta } = *self {
            if !(delta > 0.0) || !delta.is_finite() {
                return Err(Error::InvalidInput(format!("hinge smoothing width must be positive, got {delta}")));
            }
        }
        Ok(())
    }

    /// Value and first two derivatives in `η` of the minimized loss.
    fn unit(&self, y: f64, eta: f64) -> (f64, f64, f64) {
        match *self {
            ErmLoss::Quadratic => {
                let r = y - eta;
                (r * r, -2.0 * r, 2.0)
            }
            ErmLoss::Exponential => {
                let e = (-y * eta).exp();
                (e, -y * e, y * y * e)
            }
            ErmLoss::Hinge { delta } => {
                let u = 1.0 - y * eta;
                if u <= 0.0 {
                    (0.0, 0.0, 0.0)
                } else if u <= delta {
                    (u * u / (2.0 * delta), -y * u / delta, y * y / delta)
                } else {
                    (u - 0.5 * delta, -y, 0.0)
                }
            }
        }
    }

    /// The unsmoothed loss.
    pub fn exact(&self, y: f64, eta: f64) -> f64 {
        match self {
            ErmLoss::Hinge { .. } => (1.0 - y * eta).max(0.0),
            _ => self.unit(y, eta).0,
        }
    }
}

/// Negative empirical risk in the likelihood interface, so that the LQA solver
/// maximizes `−n⁻¹ Σ ℓ_i − Σ p`.
#[derive(Debug, Clone)]
pub struct ErmObjective {
    loss: ErmLoss,
    data: Dataset,
}

fn check_labels(data: &Dataset) -> Result<()> {
    if let Some(y) = data.y().iter().find(|&&y| y != 1.0 && y != -1.0) {
        return Err(Error::InvalidInput(format!("labels must be -1 or 1, got {y}")));
    }
    Ok(())
}

impl ErmObjective {
    /// Classification losses require ±1 labels; the quadratic loss accepts any response.
    pub fn new(loss: ErmLoss, data: Dataset) -> Result<Self> {
        loss.validate()?;
        if !matches!(loss, ErmLoss::Quadratic) {
            check_labels(&data)?;
        }
        Ok(ErmObjective { loss, data })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// `n⁻¹ Σ ℓ_exact(y_i, x_iᵀβ)`.
    pub fn exact_risk(&self, beta: &DVector<f64>) -> f64 {
        let eta = self.data.x() * beta;
        let n = self.data.n() as f64;
        eta.iter().zip(self.data.y().iter()).map(|(&e, &y)| self.loss.exact(y, e)).sum::<f64>() / n
    }
}

impl Likelihood for ErmObjective {
    fn n_obs(&self) -> usize {
        self.data.n()
    }

    fn dim(&self) -> usize {
        self.data.d()
    }

    fn loglik(&self, beta: &DVector<f64>) -> f64 {
        let eta = self.data.x() * beta;
        -eta.iter().zip(self.data.y().iter()).map(|(&e, &y)| self.loss.unit(y, e).0).sum::<f64>()
    }

    fn grad_hess(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let x = self.data.x();
        let eta = x * beta;
        let d = self.data.d();
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        for i in 0..self.data.n() {
            let (_, d1, d2) = self.loss.unit(self.data.y()[i], eta[i]);
            let xi = x.row(i).transpose();
            g.axpy(-d1, &xi, 1.0);
            if d2 != 0.0 {
                h.ger(-d2, &xi, &xi, 1.0);
            }
        }
        (g, h)
    }

    fn score_contributions(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let x = self.data.x();
        let eta = x * beta;
        let mut out = x.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= -self.loss.unit(self.data.y()[i], eta[i]).1;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErmFit {
    pub fit: FitResult,
    /// `n⁻¹ Σ ℓ_exact + Σ p` at the fitted coefficients.
    pub exact_objective: f64,
    /// The minimized (possibly smoothed) objective.
    pub surrogate_objective: f64,
}

/// Minimizes `n⁻¹ Σ ℓ(x_iᵀβ, y_i) + Σ_j p_{λ_j}(|β_j|)` for ±1 labels.
pub fn penalized_erm_fit(loss: ErmLoss, data: &Dataset, penalty: &[PenaltySpec], config: &LqaConfig) -> Result<ErmFit> {
    check_labels(data)?;
    let obj = ErmObjective::new(loss, data.clone())?;
    let fit = lqa::fit(&obj, penalty, config)?;
    let pen = total_penalty(penalty, fit.beta.as_slice());
    Ok(ErmFit {
        exact_objective: obj.exact_risk(&fit.beta) + pen,
        surrogate_objective: -fit.objective,
        fit,
    })
}

/// Monte Carlo estimate of an excess risk and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskGap {
    pub gap: f64,
    pub std_error: f64,
    pub mc_n: usize,
}

pub const MIN_MC_N: usize = 100;
const SHARDS: usize = 8;

/// `E ℓ(Xᵀβ̂, Y) − E ℓ(Xᵀβ*, Y)` from `mc_n` paired draws of `generator`.
///
/// Draws are split into shards, shard `k` using stream `k` of a ChaCha8 generator
/// seeded with `seed`, so the estimate does not depend on the thread count.
pub fn empirical_risk_gap<G>(beta_hat: &DVector<f64>, beta_star: &DVector<f64>, loss: ErmLoss, generator: G, mc_n: usize, seed: u64) -> Result<RiskGap>
where
    G: Fn(&mut ChaCha8Rng) -> (DVector<f64>, f64) + Sync,
{
    if mc_n < MIN_MC_N {
        return Err(Error::Refused(format!("Monte Carlo size {mc_n} is below {MIN_MC_N}")));
    }
    if beta_hat.len() != beta_star.len() {
        return Err(Error::Dimension(format!(
            "coefficient vectors have lengths {} and {}",
            beta_hat.len(),
            beta_star.len()
        )));
    }
    loss.validate()?;
    let per = mc_n.div_ceil(SHARDS);
    let sums: Vec<Result<(f64, f64)>> = (0..SHARDS)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let count = per.min(mc_n.saturating_sub(k * per));
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let (x, y) = generator(&mut rng);
                if x.len() != beta_hat.len() {
                    return Err(Error::Dimension(format!("generator produced {} covariates", x.len())));
                }
                let diff = loss.exact(y, x.dot(beta_hat)) - loss.exact(y, x.dot(beta_star));
                s += diff;
                s2 += diff * diff;
            }
            Ok((s, s2))
        })
        .collect();
    let (mut s, mut s2) = (0.0, 0.0);
    for r in sums {
        let (a, b) = r?;
        s += a;
        s2 += b;
    }
    let n = mc_n as f64;
    let mean = s / n;
    let var = ((s2 / n) - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(RiskGap {
        gap: mean,
        std_error: (var / n).sqrt(),
        mc_n,
    })
}
