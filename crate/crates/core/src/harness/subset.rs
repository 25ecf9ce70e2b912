//! Exhaustive best-subset selection under the L0 penalized least-squares score.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::likelihoods::Dataset;
use crate::linalg::{least_squares, select_columns};

pub const DEFAULT_MAX_D: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetFit {
    pub subset: Vec<usize>,
    /// Full-length coefficient vector, zero outside the subset.
    pub coefficients: Vec<f64>,
    pub rss: f64,
    /// `RSS/(2n) + λ²|M|/2`.
    pub score: f64,
}

/// Minimizes `RSS_M/(2n) + λ²|M|/2` over all subsets `M` of the columns.
///
/// Columns listed in `always` (an intercept, say) are part of every model and
/// do not count towards `|M|`. Ties are resolved towards smaller subsets.
pub fn best_subset_oracle(data: &Dataset, lambda: f64, max_d: usize, always: &[usize]) -> Result<SubsetFit> {
    let d = data.d();
    let max_d = max_d.min(DEFAULT_MAX_D);
    if let Some(&bad) = always.iter().find(|&&j| j >= d) {
        return Err(Error::Dimension(format!("column {bad} out of range for d = {d}")));
    }
    let free: Vec<usize> = (0..d).filter(|j| !always.contains(j)).collect();
    if free.len() > max_d {
        return Err(Error::Refused(format!(
            "exhaustive search over {} columns exceeds the limit of {max_d}",
            free.len()
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let n = data.n() as f64;
    let mut best: Option<SubsetFit> = None;
    for mask in 0u32..(1u32 << free.len()) {
        let mut cols: Vec<usize> = always.to_vec();
        cols.extend(free.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &j)| j));
        cols.sort_unstable();
        let (coef, rss) = match least_squares(&select_columns(data.x(), &cols), data.y()) {
            Ok(r) => r,
            Err(Error::Singular(_)) => continue,
            Err(e) => return Err(e),
        };
        let size = mask.count_ones() as usize;
        let score = rss / (2.0 * n) + lambda * lambda * size as f64 / 2.0;
        let better = match &best {
            None => true,
            Some(b) => {
                let slack = 1e-12 * (1.0 + b.score.abs());
                let bsize = b.subset.len() - always.len();
                score < b.score - slack || (score <= b.score + slack && size < bsize)
            }
        };
        if better {
            let mut full = DVector::zeros(d);
            for (k, &j) in cols.iter().enumerate() {
                full[j] = coef[k];
            }
            best = Some(SubsetFit {
                subset: cols,
                coefficients: full.as_slice().to_vec(),
                rss,
                score,
            });
        }
    }
    best.ok_or_else(|| Error::Singular("every candidate design is rank deficient".into()))
}
