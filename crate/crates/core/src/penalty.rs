//! Penalty functions `p_λ(|β|)` used by the penalized estimators, together with
//! the exact scalar minimizer of `½(z − β)² + p_λ(|β|)` for each family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape parameter of SCAD used when none is supplied.
pub const DEFAULT_SCAD_A: f64 = 3.7;

/// How the ridge penalty is scaled.
///
/// `Full` is `λβ²` (so `p'(β)/β = 2λ` and the scalar solution is
/// `z / (1 + 2λ)`). `Half` is `½λβ²`, whose scalar solution is `z / (1 + λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgeScale {
    #[default]
    Full,
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyKind {
    /// `λ² − (λ − |β|)₊²`
    Hard,
    /// `½λ² I(β ≠ 0)`, the L0 penalty.
    Entropy,
    L1,
    L2 {
        #[serde(default)]
        scale: RidgeScale,
    },
    /// `λ|β|^q` with `0 < q < 2`.
    Bridge { q: f64 },
    Scad { a: f64 },
}

impl PenaltyKind {
    pub fn scad() -> Self {
        PenaltyKind::Scad { a: DEFAULT_SCAD_A }
    }

    pub fn ridge() -> Self {
        PenaltyKind::L2 {
            scale: RidgeScale::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PenaltyKind::Scad { a } if !(a > 2.0) || !a.is_finite() => {
                Err(Error::InvalidInput(format!("SCAD shape a must exceed 2, got {a}")))
            }
            PenaltyKind::Bridge { q } if !(q > 0.0 && q < 2.0) => Err(Error::InvalidInput(
                format!("bridge exponent q must lie in (0, 2), got {q}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn with_lambda(self, lambda: f64) -> Result<PenaltySpec> {
        PenaltySpec::new(self, lambda)
    }

    /// Short name used by the CLI and in reports.
    pub fn name(&self) -> &'static str {
        match self {
            PenaltyKind::Hard => "hard",
            PenaltyKind::Entropy => "entropy",
            PenaltyKind::L1 => "l1",
            PenaltyKind::L2 { .. } => "l2",
            PenaltyKind::Bridge { .. } => "bridge",
            PenaltyKind::Scad { .. } => "scad",
        }
    }

    /// Parses `scad`, `l1`, `lasso`, `l2`, `ridge`, `ridge-half`, `hard`,
    /// `entropy`, `l0`, `bridge`. The extra shape parameters come from `a` and `q`.
    pub fn parse(name: &str, a: f64, q: f64) -> Result<Self> {
        let kind = match name.to_ascii_lowercase().as_str() {
            "scad" => PenaltyKind::Scad { a },
            "l1" | "lasso" | "soft" => PenaltyKind::L1,
            "l2" | "ridge" => PenaltyKind::L2 {
                scale: RidgeScale::Full,
            },
            "l2-half" | "ridge-half" => PenaltyKind::L2 {
                scale: RidgeScale::Half,
            },
            "hard" => PenaltyKind::Hard,
            "entropy" | "l0" => PenaltyKind::Entropy,
            "bridge" | "lq" => PenaltyKind::Bridge { q },
            other => return Err(Error::InvalidInput(format!("unknown penalty kind `{other}`"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// A penalty family member at one regularization level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct PenaltySpec {
    kind: PenaltyKind,
    lambda: f64,
}

#[derive(Deserialize)]
struct RawSpec {
    kind: PenaltyKind,
    lambda: f64,
}

impl TryFrom<RawSpec> for PenaltySpec {
    type Error = Error;
    fn try_from(raw: RawSpec) -> Result<Self> {
        PenaltySpec::new(raw.kind, raw.lambda)
    }
}

/// Outcome of the three penalty-shape conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PenaltyProperties {
    pub sparsity: bool,
    pub unbiasedness: bool,
    pub continuity: bool,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, lambda: f64) -> Result<Self> {
        kind.validate()?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!(
                "lambda must be a finite nonnegative number, got {lambda}"
            )));
        }
        Ok(PenaltySpec { kind, lambda })
    }

    /// A coordinate that carries no penalty.
    pub fn unpenalized(kind: PenaltyKind) -> Self {
        PenaltySpec { kind, lambda: 0.0 }
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_penalized(&self) -> bool {
        self.lambda > 0.0
    }

    pub fn is_entropy(&self) -> bool {
        matches!(self.kind, PenaltyKind::Entropy)
    }

    pub fn value(&self, beta_abs: f64) -> Result<f64> {
        if !(beta_abs >= 0.0) {
            return Err(Error::Domain(format!("penalty evaluated at |β| = {beta_abs}")));
        }
        Ok(self.value_at(beta_abs))
    }

    pub(crate) fn value_at(&self, b: f64) -> f64 {
        let lam = self.lambda;
        if lam == 0.0 {
            return 0.0;
        }
        match self.kind {
            PenaltyKind::Hard => {
                let gap = (lam - b).max(0.0);
                lam * lam - gap * gap
            }
            PenaltyKind::Entropy => {
                if b == 0.0 {
                    0.0
                } else {
                    0.5 * lam * lam
                }
            }
            PenaltyKind::L1 => lam * b,
            PenaltyKind::L2 { scale } => match scale {
                RidgeScale::Full => lam * b * b,
                RidgeScale::Half => 0.5 * lam * b * b,
            },
            PenaltyKind::Bridge { q } => {
                if b == 0.0 {
                    0.0
                } else {
                    lam * b.powf(q)
                }
            }
            PenaltyKind::Scad { a } => {
                if b < lam {
                    lam * b
                } else if b < a * lam {
                    -(b * b - 2.0 * a * lam * b + lam * lam) / (2.0 * (a - 1.0))
                } else {
                    (a + 1.0) * lam * lam / 2.0
                }
            }
        }
    }

    /// `p'_λ(|β|)` for `|β| > 0`.
    pub fn deriv(&self, beta_abs: f64) -> Result<f64> {
        if !(beta_abs > 0.0) {
            return Err(Error::Domain(format!(
                "penalty derivative requires |β| > 0, got {beta_abs}; use deriv_at_zero_plus"
            )));
        }
        Ok(self.deriv_at(beta_abs))
    }

    pub(crate) fn deriv_at(&self, b: f64) -> f64 {
        let lam = self.lambda;
        if lam == 0.0 {
            return 0.0;
        }
        match self.kind {
            PenaltyKind::Hard => 2.0 * (lam - b).max(0.0),
            PenaltyKind::Entropy => 0.0,
            PenaltyKind::L1 => lam,
            PenaltyKind::L2 { scale } => match scale {
                RidgeScale::Full => 2.0 * lam * b,
                RidgeScale::Half => lam * b,
            },
            PenaltyKind::Bridge { q } => lam * q * b.powf(q - 1.0),
            PenaltyKind::Scad { a } => {
                if b < lam {
                    lam
                } else if b < a * lam {
                    (a * lam - b) / (a - 1.0)
                } else {
                    0.0
                }
            }
        }
    }

    /// Right derivative at the origin, `lim_{β→0+} {p(β) − p(0)} / β`.
    ///
    /// Infinite for the entropy penalty (jump at zero) and for bridge with `q < 1`.
    pub fn deriv_at_zero_plus(&self) -> f64 {
        let lam = self.lambda;
        if lam == 0.0 {
            return 0.0;
        }
        match self.kind {
            PenaltyKind::Hard => 2.0 * lam,
            PenaltyKind::Entropy => f64::INFINITY,
            PenaltyKind::L1 | PenaltyKind::Scad { .. } => lam,
            PenaltyKind::L2 { .. } => 0.0,
            PenaltyKind::Bridge { q } => {
                if q < 1.0 {
                    f64::INFINITY
                } else if q == 1.0 {
                    lam
                } else {
                    0.0
                }
            }
        }
    }

    /// `p''_λ(|β|)` by central differences of the analytic first derivative.
    pub fn second_deriv(&self, beta_abs: f64) -> Result<f64> {
        if !(beta_abs > 0.0) {
            return Err(Error::Domain(format!(
                "second derivative requires |β| > 0, got {beta_abs}"
            )));
        }
        let h = 1e-6 * beta_abs.max(self.lambda).max(1e-3);
        let h = h.min(0.5 * beta_abs);
        Ok((self.deriv_at(beta_abs + h) - self.deriv_at(beta_abs - h)) / (2.0 * h))
    }

    /// Analytic curvature where the penalty is twice differentiable; used by the
    /// Newton polish in the solver.
    pub(crate) fn curvature_at(&self, b: f64) -> f64 {
        let lam = self.lambda;
        if lam == 0.0 {
            return 0.0;
        }
        match self.kind {
            PenaltyKind::Hard => {
                if b < lam {
                    -2.0
                } else {
                    0.0
                }
            }
            PenaltyKind::Entropy | PenaltyKind::L1 => 0.0,
            PenaltyKind::L2 { scale } => match scale {
                RidgeScale::Full => 2.0 * lam,
                RidgeScale::Half => lam,
            },
            PenaltyKind::Bridge { q } => lam * q * (q - 1.0) * b.powf(q - 2.0),
            PenaltyKind::Scad { a } => {
                if b >= lam && b < a * lam {
                    -1.0 / (a - 1.0)
                } else {
                    0.0
                }
            }
        }
    }

    /// Global minimizer of `½(z − β)² + p_λ(|β|)` over β.
    ///
    /// Ties between branches resolve to the smaller |β|.
    pub fn threshold(&self, z: f64) -> f64 {
        let lam = self.lambda;
        let m = z.abs();
        if lam == 0.0 || m == 0.0 {
            return z;
        }
        let s = z.signum();
        let beta = match self.kind {
            // On (0, λ) the objective is concave, so only 0 and z compete:
            // ½z² against λ².
            PenaltyKind::Hard => {
                if 0.5 * m * m > lam * lam {
                    z
                } else {
                    0.0
                }
            }
            PenaltyKind::Entropy => {
                if m > lam {
                    z
                } else {
                    0.0
                }
            }
            PenaltyKind::L1 => s * (m - lam).max(0.0),
            PenaltyKind::L2 { scale } => match scale {
                RidgeScale::Full => z / (1.0 + 2.0 * lam),
                RidgeScale::Half => z / (1.0 + lam),
            },
            PenaltyKind::Bridge { q } => s * bridge_scalar_min(m, lam, q),
            PenaltyKind::Scad { a } => {
                if m <= 2.0 * lam {
                    s * (m - lam).max(0.0)
                } else if m <= a * lam {
                    ((a - 1.0) * z - s * a * lam) / (a - 2.0)
                } else {
                    z
                }
            }
        };
        // Normalizes −0.
        beta + 0.0
    }

    /// Numerical check of the sparsity, unbiasedness and continuity conditions
    /// on `φ(β) = β + p'_λ(β)`.
    ///
    /// - sparsity: `inf_{β>0} φ(β) > 0`
    /// - unbiasedness: `p'_λ(β) → 0` as β grows
    /// - continuity: the infimum of φ is attained at `0+`
    pub fn check_properties(&self) -> Result<PenaltyProperties> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidInput("property checks need lambda > 0".into()));
        }
        let lam = self.lambda;
        let a = match self.kind {
            PenaltyKind::Scad { a } => a,
            _ => DEFAULT_SCAD_A,
        };
        const GRID: usize = 100_000;
        let upper = 10.0 * a * lam;
        let step = upper / GRID as f64;
        let phi_zero = self.deriv_at_zero_plus();
        let grid_min = (1..=GRID)
            .map(|k| {
                let b = k as f64 * step;
                b + self.deriv_at(b)
            })
            .fold(f64::INFINITY, f64::min);
        let slack = 1e-9 * lam;
        let sparsity = phi_zero.min(grid_min) > slack;
        let continuity = phi_zero <= grid_min + slack;

        // Geometric tail beyond the dense grid: the derivative must die out.
        let tail_start = self.deriv_at(upper);
        let tail_end = self.deriv_at(upper * 1e8);
        let unbiasedness = tail_end <= 1e-3 * tail_start.max(lam);

        Ok(PenaltyProperties {
            sparsity,
            unbiasedness,
            continuity,
        })
    }
}

/// Minimizer of `h(β) = ½(m − β)² + λβ^q` over `β ∈ [0, m]`, `m > 0`.
///
/// For `q < 1`, `h` is concave below `β_c = {λq(1−q)}^{1/(2−q)}` and convex
/// above it, so the only interior candidate is the minimizer on `[β_c, m]`;
/// that candidate is compared against `β = 0`.
fn bridge_scalar_min(m: f64, lam: f64, q: f64) -> f64 {
    let h = |b: f64| 0.5 * (m - b) * (m - b) + if b > 0.0 { lam * b.powf(q) } else { 0.0 };
    let lo = if q < 1.0 {
        (lam * q * (1.0 - q)).powf(1.0 / (2.0 - q))
    } else {
        0.0
    };
    if lo >= m {
        return 0.0;
    }
    let inner = golden_section(&h, lo, m, 1e-12 * m.max(1.0));
    let inner = newton_polish(m, lam, q, inner, lo, m);
    if h(inner) < h(0.0) {
        inner
    } else {
        0.0
    }
}

fn golden_section(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    [lo, mid, hi]
        .into_iter()
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap_or(mid)
}

/// A few bracketed Newton steps on `h'(β) = β − m + λqβ^{q−1}`.
fn newton_polish(m: f64, lam: f64, q: f64, start: f64, lo: f64, hi: f64) -> f64 {
    let mut b = start;
    if b <= 0.0 {
        return b;
    }
    for _ in 0..8 {
        let g = b - m + lam * q * b.powf(q - 1.0);
        let c = 1.0 + lam * q * (q - 1.0) * b.powf(q - 2.0);
        if !(c > 0.0) {
            break;
        }
        let next = b - g / c;
        if !(next > lo && next <= hi) || !next.is_finite() {
            break;
        }
        if (next - b).abs() <= 1e-15 * b.max(1.0) {
            b = next;
            break;
        }
        b = next;
    }
    b
}

/// One penalty per coordinate, all of the same kind, at levels `lambdas`.
pub fn per_coordinate(kind: PenaltyKind, lambdas: &[f64]) -> Result<Vec<PenaltySpec>> {
    lambdas.iter().map(|&l| PenaltySpec::new(kind, l)).collect()
}

/// Total penalty `Σ_j p_{λ_j}(|β_j|)`.
pub fn total_penalty(penalty: &[PenaltySpec], beta: &[f64]) -> f64 {
    penalty
        .iter()
        .zip(beta)
        .map(|(p, b)| p.value_at(b.abs()))
        .sum()
}
