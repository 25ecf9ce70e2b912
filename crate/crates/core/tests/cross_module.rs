//! Checks that span several modules, each against an independent computation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use penlik::harness::generate::{linear, orthonormal_design, rng_for, RegressionParams};
use penlik::harness::orthonormal::{fit_orthonormal, universal_lambda, Universal};
use penlik::harness::subset::best_subset_oracle;
use penlik::likelihoods::{Dataset, GlmFamily, GlmObjective};
use penlik::lqa::{self, LqaConfig};
use penlik::penalty::{PenaltyKind, PenaltySpec, RidgeScale};
use penlik::tuning::{argmin, gcv_score, gcv_select, TuneOptions};

fn rss(x: &DMatrix<f64>, y: &DVector<f64>, cols: &[usize]) -> f64 {
    if cols.is_empty() {
        return y.norm_squared();
    }
    let xs = DMatrix::from_fn(x.nrows(), cols.len(), |i, k| x[(i, cols[k])]);
    let b = (xs.transpose() * &xs).cholesky().unwrap().solve(&(xs.transpose() * y));
    (y - xs * b).norm_squared()
}

#[test]
fn orthonormal_thresholding_agrees_with_solver() {
    let mut rng = rng_for(21, 0);
    let (n, d) = (128, 16);
    let x = orthonormal_design(n, d, &mut rng).unwrap();
    let beta = DVector::from_fn(d, |j, _| if j % 3 == 0 { 0.0 } else { 0.6 - 0.08 * j as f64 });
    let y = &x * beta + DVector::from_fn(n, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
    let z: Vec<f64> = (x.transpose() * &y / n as f64).iter().copied().collect();
    let lik = GlmObjective::new(GlmFamily::Gaussian, Dataset::new(x, y).unwrap()).unwrap();
    let universal = Universal { n, sigma: 0.5 };
    let kinds = [
        PenaltyKind::Hard,
        PenaltyKind::Entropy,
        PenaltyKind::L1,
        PenaltyKind::L2 { scale: RidgeScale::Full },
        PenaltyKind::scad(),
        PenaltyKind::Bridge { q: 0.5 },
    ];
    for kind in kinds {
        let ortho = fit_orthonormal(&z, kind, 0.0, Some(universal)).unwrap();
        assert_eq!(ortho.lambda, universal_lambda(n, 0.5));
        let pen = vec![PenaltySpec::new(kind, ortho.lambda).unwrap(); d];
        let fit = lqa::fit(&lik, &pen, &LqaConfig::default()).unwrap();
        for j in 0..d {
            assert!((fit.beta[j] - ortho.coefficients[j]).abs() < 1e-6, "{kind:?} j={j}");
        }
    }
}

#[test]
fn crafted_three_column_subset_matches_enumeration_and_entropy_fit() {
    let x = DMatrix::from_row_slice(
        8,
        3,
        &[
            1.0, 0.2, -0.3, -1.0, 0.5, 0.1, 0.5, -0.4, 0.9, -0.5, 1.1, -0.2, 1.5, 0.0, 0.4, -1.5, -0.7, 0.0, 0.3,
            0.9, -1.1, -0.3, -1.2, 0.6,
        ],
    );
    let y = DVector::from_fn(8, |i, _| 2.0 * x[(i, 0)] + 0.15 * ((i as f64) - 3.5));
    let data = Dataset::new(x.clone(), y.clone()).unwrap();
    let lam = 0.25;
    let subsets: Vec<Vec<usize>> = (0u32..8).map(|m| (0..3).filter(|j| m >> j & 1 == 1).collect()).collect();
    let score = |s: &Vec<usize>| rss(&x, &y, s) / 16.0 + lam * lam * s.len() as f64 / 2.0;
    let best = subsets
        .iter()
        .min_by(|a, b| score(a).total_cmp(&score(b)).then(a.len().cmp(&b.len())))
        .unwrap();
    let oracle = best_subset_oracle(&data, lam, 15, &[]).unwrap();
    assert_eq!(&oracle.subset, best);
    let lik = GlmObjective::new(GlmFamily::Gaussian, data).unwrap();
    let fit = lqa::fit(&lik, &[PenaltySpec::new(PenaltyKind::Entropy, lam).unwrap(); 3], &LqaConfig::default()).unwrap();
    assert_eq!(&fit.active_set, best);
}

#[test]
fn gcv_scores_are_the_display_formula() {
    let data = linear(
        &RegressionParams {
            n: 120,
            beta: vec![1.0, 0.0, -0.5, 0.0],
            rho: 0.5,
            sigma: 1.0,
        },
        &mut rng_for(23, 0),
    )
    .unwrap();
    let lik = GlmObjective::new(GlmFamily::Gaussian, data).unwrap();
    let t = gcv_select(&lik, PenaltyKind::scad(), &TuneOptions::default()).unwrap();
    for (p, &g) in t.points.iter().zip(&t.gcv_scores) {
        assert_eq!(g, gcv_score(p.loglik, p.effective_params, 120));
        let s = 1.0 - p.effective_params / 120.0;
        assert_eq!(g, -p.loglik / (120.0 * s * s));
    }
    assert_eq!(Some(t.chosen_index), argmin(&t.gcv_scores));
    assert_eq!(t.chosen_lambda, t.lambda_grid[t.chosen_index]);
}

fn pure_noise(r: u64) -> Dataset {
    linear(
        &RegressionParams {
            n: 200,
            beta: vec![0.0; 8],
            rho: 0.5,
            sigma: 1.0,
        },
        &mut rng_for(24, r),
    )
    .unwrap()
}

/// GCV of the empty model against GCV of the full least-squares fit, both by
/// direct computation.
#[test]
fn pure_noise_gcv_prefers_empty_model_to_full_fit() {
    let reps = 200;
    let all: Vec<usize> = (0..8).collect();
    let wins = (0..reps)
        .filter(|&r| {
            let data = pure_noise(r);
            let empty = rss(data.x(), data.y(), &[]) / 2.0 / 200.0;
            let full = rss(data.x(), data.y(), &all) / 2.0 / (200.0 * (1.0 - 8.0 / 200.0_f64).powi(2));
            empty < full
        })
        .count();
    assert!(wins as f64 >= 0.9 * reps as f64, "empty model won in {wins}/{reps}");
}

/// Selected model under GCV on pure-noise data is empty or has one variable.
#[test]
fn pure_noise_gcv_selects_near_empty_model() {
    let reps = 200;
    let sizes: Vec<usize> = (0..reps)
        .map(|r| {
            let lik = GlmObjective::new(GlmFamily::Gaussian, pure_noise(r)).unwrap();
            gcv_select(&lik, PenaltyKind::scad(), &TuneOptions::default()).unwrap().fit_at_chosen.active_set.len()
        })
        .collect();
    let near_empty = sizes.iter().filter(|&&s| s <= 1).count();
    let mut hist = [0usize; 9];
    for s in &sizes {
        hist[*s] += 1;
    }
    assert!(
        near_empty as f64 >= 0.9 * reps as f64,
        "near-empty in {near_empty}/{reps}; active-set size histogram {hist:?}"
    );
}
