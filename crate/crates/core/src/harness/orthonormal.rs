//! Componentwise penalized least squares under an orthonormal design.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::penalty::{PenaltyKind, PenaltySpec};

/// `σ √(2 log n / n)`.
pub fn universal_lambda(n: usize, sigma: f64) -> f64 {
    let nf = n as f64;
    sigma * (2.0 * nf.ln() / nf).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrthoFit {
    pub coefficients: Vec<f64>,
    pub lambda: f64,
}

/// Universal threshold settings overriding the supplied λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Universal {
    pub n: usize,
    pub sigma: f64,
}

/// Applies the scalar thresholding rule to every coordinate of `z`.
pub fn fit_orthonormal(z: &[f64], kind: PenaltyKind, lambda: f64, universal: Option<Universal>) -> Result<OrthoFit> {
    if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("coefficients must be finite, got {bad}")));
    }
    let lambda = match universal {
        Some(u) => {
            if u.n < 2 {
                return Err(Error::InvalidInput(format!("universal threshold needs n ≥ 2, got {}", u.n)));
            }
            if !(u.sigma >= 0.0) || !u.sigma.is_finite() {
                return Err(Error::InvalidInput(format!("sigma must be nonnegative, got {}", u.sigma)));
            }
            universal_lambda(u.n, u.sigma)
        }
        None => lambda,
    };
    let spec = PenaltySpec::new(kind, lambda)?;
    Ok(OrthoFit {
        coefficients: z.iter().map(|&v| spec.threshold(v)).collect(),
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_zero_output() {
        let f = fit_orthonormal(&[0.0; 5], PenaltyKind::scad(), 0.4, None).unwrap();
        assert!(f.coefficients.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn universal_value() {
        let expect = (2.0 * 1024f64.ln() / 1024.0).sqrt();
        assert!((universal_lambda(1024, 1.0) - expect).abs() < 1e-15);
        let f = fit_orthonormal(&[0.05, -0.2, 0.5], PenaltyKind::L1, 99.0, Some(Universal { n: 1024, sigma: 1.0 })).unwrap();
        assert_eq!(f.lambda, expect);
        assert_eq!(f.coefficients[0], 0.0);
        assert!((f.coefficients[1] + 0.2 - expect).abs() < 1e-15);
    }
}
