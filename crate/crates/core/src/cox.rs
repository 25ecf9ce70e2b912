//! Cox proportional-hazards partial likelihood.
//!
//! Tied failure times share one risk-set denominator (Breslow).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::likelihoods::Likelihood;

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalData {
    x: DMatrix<f64>,
    time: Vec<f64>,
    status: Vec<bool>,
}

impl SurvivalData {
    /// `status[i]` is true when the failure of subject `i` was observed.
    pub fn new(x: DMatrix<f64>, time: Vec<f64>, status: Vec<bool>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 || x.ncols() == 0 {
            return Err(Error::InvalidInput("survival data needs n ≥ 1 and d ≥ 1".into()));
        }
        if time.len() != n || status.len() != n {
            return Err(Error::Dimension(format!(
                "{n} covariate rows, {} times, {} status flags",
                time.len(),
                status.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("covariates contain NaN or infinite values".into()));
        }
        if let Some(t) = time.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
            return Err(Error::InvalidInput(format!("observed times must be positive, got {t}")));
        }
        if !status.iter().any(|&s| s) {
            return Err(Error::NoFailures);
        }
        Ok(SurvivalData { x, time, status })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn status(&self) -> &[bool] {
        &self.status
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn select_columns(&self, cols: &[usize]) -> Result<SurvivalData> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.d()) {
            return Err(Error::Dimension(format!("column {bad} out of range for d = {}", self.d())));
        }
        Ok(SurvivalData {
            x: crate::linalg::select_columns(&self.x, cols),
            time: self.time.clone(),
            status: self.status.clone(),
        })
    }
}

/// One distinct observed failure time.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureEvent {
    pub time: f64,
    /// Subjects failing at this time (more than one only under ties).
    pub failing: Vec<usize>,
    /// `{i : Z_i ≥ time}`, ascending.
    pub risk_set: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskSetIndex {
    events: Vec<FailureEvent>,
    /// Subjects ordered by decreasing observed time.
    by_time_desc: Vec<usize>,
}

impl RiskSetIndex {
    pub fn events(&self) -> &[FailureEvent] {
        &self.events
    }
}

/// Orders the failure times and builds the nested risk sets.
pub fn build_risk_sets(data: &SurvivalData) -> Result<RiskSetIndex> {
    let n = data.n();
    let mut fail_times: Vec<f64> = (0..n).filter(|&i| data.status[i]).map(|i| data.time[i]).collect();
    if fail_times.is_empty() {
        return Err(Error::NoFailures);
    }
    fail_times.sort_by(f64::total_cmp);
    fail_times.dedup();
    let events = fail_times
        .into_iter()
        .map(|t| FailureEvent {
            time: t,
            failing: (0..n).filter(|&i| data.status[i] && data.time[i] == t).collect(),
            risk_set: (0..n).filter(|&i| data.time[i] >= t).collect(),
        })
        .collect();
    let mut by_time_desc: Vec<usize> = (0..n).collect();
    by_time_desc.sort_by(|&a, &b| data.time[b].total_cmp(&data.time[a]));
    Ok(RiskSetIndex {
        events,
        by_time_desc,
    })
}

/// Partial likelihood bound to its data and risk sets.
#[derive(Debug, Clone)]
pub struct CoxObjective {
    data: SurvivalData,
    index: RiskSetIndex,
}

/// Running exponentially weighted sums over a growing risk set, kept relative
/// to the largest linear predictor seen so far.
struct RiskSums {
    shift: f64,
    s0: f64,
    s1: DVector<f64>,
    s2: DMatrix<f64>,
}

impl RiskSums {
    fn new(d: usize) -> Self {
        RiskSums {
            shift: f64::NEG_INFINITY,
            s0: 0.0,
            s1: DVector::zeros(d),
            s2: DMatrix::zeros(d, d),
        }
    }

    fn add(&mut self, eta: f64, x: &DVector<f64>, second_order: bool) {
        if eta > self.shift {
            let scale = (self.shift - eta).exp();
            self.s0 *= scale;
            self.s1 *= scale;
            if second_order {
                self.s2 *= scale;
            }
            self.shift = eta;
        }
        let w = (eta - self.shift).exp();
        self.s0 += w;
        self.s1.axpy(w, x, 1.0);
        if second_order {
            self.s2.ger(w, x, x, 1.0);
        }
    }

    fn log_denominator(&self) -> f64 {
        self.shift + self.s0.ln()
    }
}

impl CoxObjective {
    pub fn new(data: SurvivalData) -> Result<Self> {
        let index = build_risk_sets(&data)?;
        Ok(CoxObjective { data, index })
    }

    pub fn data(&self) -> &SurvivalData {
        &self.data
    }

    pub fn risk_sets(&self) -> &RiskSetIndex {
        &self.index
    }

    fn check(&self, beta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.data.d() {
            return Err(Error::Dimension(format!(
                "beta has length {} but there are {} covariates",
                beta.len(),
                self.data.d()
            )));
        }
        Ok(())
    }

    pub fn partial_loglik(&self, beta: &DVector<f64>) -> Result<f64> {
        self.check(beta)?;
        Ok(self.loglik(beta))
    }

    pub fn partial_grad_hess(&self, beta: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check(beta)?;
        Ok(self.grad_hess(beta))
    }

    /// Walks the failure times from latest to earliest, growing the risk set,
    /// and hands each event with its running sums to `visit`.
    fn sweep(&self, beta: &DVector<f64>, second_order: bool, mut visit: impl FnMut(&FailureEvent, &RiskSums, &DVector<f64>)) {
        let eta = &self.data.x * beta;
        let d = self.data.d();
        let mut sums = RiskSums::new(d);
        let order = &self.index.by_time_desc;
        let mut next = 0;
        for event in self.index.events.iter().rev() {
            while next < order.len() && self.data.time[order[next]] >= event.time {
                let i = order[next];
                let xi = self.data.x.row(i).transpose();
                sums.add(eta[i], &xi, second_order);
                next += 1;
            }
            visit(event, &sums, &eta);
        }
    }

    fn row(&self, i: usize) -> DVector<f64> {
        self.data.x.row(i).transpose()
    }
}

impl Likelihood for CoxObjective {
    fn n_obs(&self) -> usize {
        self.data.n()
    }

    fn dim(&self) -> usize {
        self.data.d()
    }

    fn loglik(&self, beta: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        self.sweep(beta, false, |event, sums, eta| {
            let k = event.failing.len() as f64;
            let num: f64 = event.failing.iter().map(|&i| eta[i]).sum();
            total += num - k * sums.log_denominator();
        });
        total
    }

    fn grad_hess(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.data.d();
        let mut grad = DVector::zeros(d);
        let mut hess = DMatrix::zeros(d, d);
        self.sweep(beta, true, |event, sums, _| {
            let k = event.failing.len() as f64;
            for &i in &event.failing {
                grad += self.row(i);
            }
            let mean = &sums.s1 / sums.s0;
            grad.axpy(-k, &mean, 1.0);
            let second = &sums.s2 / sums.s0 - &mean * mean.transpose();
            hess -= second * k;
        });
        crate::linalg::symmetrize(&mut hess);
        (grad, hess)
    }

    /// Score residuals: for subject `i`,
    /// `δ_i (x_i − x̄(Z_i)) − Σ_{j : t_j ≤ Z_i} |D_j| w_i(t_j) (x_i − x̄(t_j))`.
    fn score_contributions(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.data.n();
        let d = self.data.d();
        let mut events: Vec<(f64, f64, f64, f64, DVector<f64>)> = Vec::new();
        self.sweep(beta, false, |event, sums, _| {
            events.push((
                event.time,
                event.failing.len() as f64,
                sums.shift,
                sums.s0,
                &sums.s1 / sums.s0,
            ));
        });
        let eta = &self.data.x * beta;
        let mut out = DMatrix::zeros(n, d);
        for i in 0..n {
            let xi = self.row(i);
            let mut u = DVector::zeros(d);
            for (t, k, shift, s0, mean) in &events {
                if *t > self.data.time[i] {
                    continue;
                }
                if self.data.status[i] && *t == self.data.time[i] {
                    u += &xi - mean;
                }
                let w = (eta[i] - shift).exp() / s0;
                u.axpy(-k * w, &(&xi - mean), 1.0);
            }
            out.set_row(i, &u.transpose());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(x: &[f64], d: usize, time: &[f64], status: &[bool]) -> SurvivalData {
        SurvivalData::new(
            DMatrix::from_row_slice(time.len(), d, x),
            time.to_vec(),
            status.to_vec(),
        )
        .unwrap()
    }

    /// Direct evaluation of the partial likelihood from its definition.
    fn naive_loglik(sd: &SurvivalData, beta: &DVector<f64>) -> f64 {
        let eta = sd.x() * beta;
        let n = sd.n();
        (0..n)
            .filter(|&i| sd.status()[i])
            .map(|i| {
                let denom: f64 = (0..n)
                    .filter(|&k| sd.time()[k] >= sd.time()[i])
                    .map(|k| eta[k].exp())
                    .sum();
                eta[i] - denom.ln()
            })
            .sum()
    }

    fn random_survival(rng: &mut ChaCha8Rng, n: usize, d: usize) -> SurvivalData {
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let time = (0..n).map(|_| rng.random_range(0.1..5.0)).collect();
        let mut status: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        status[0] = true;
        SurvivalData::new(x, time, status).unwrap()
    }

    #[test]
    fn risk_sets_two_failures() {
        let sd = data(&[0.0, 0.0], 1, &[1.0, 2.0], &[true, true]);
        let idx = build_risk_sets(&sd).unwrap();
        assert_eq!(idx.events()[0].risk_set, vec![0, 1]);
        assert_eq!(idx.events()[1].risk_set, vec![1]);
    }

    #[test]
    fn risk_sets_with_censoring() {
        let sd = data(&[0.0, 0.0], 1, &[1.0, 2.0], &[false, true]);
        let idx = build_risk_sets(&sd).unwrap();
        assert_eq!(idx.events().len(), 1);
        assert_eq!(idx.events()[0].time, 2.0);
        assert_eq!(idx.events()[0].risk_set, vec![1]);
    }

    #[test]
    fn risk_sets_unordered_input() {
        let sd = data(&[0.0; 3], 1, &[2.0, 1.0, 3.0], &[true, true, false]);
        let idx = build_risk_sets(&sd).unwrap();
        let ev = idx.events();
        assert_eq!((ev[0].time, ev[1].time), (1.0, 2.0));
        assert_eq!(ev[0].failing, vec![1]);
        assert_eq!(ev[0].risk_set, vec![0, 1, 2]);
        assert_eq!(ev[1].failing, vec![0]);
        assert_eq!(ev[1].risk_set, vec![0, 2]);
        for e in ev {
            assert!(e.failing.iter().all(|f| e.risk_set.contains(f)));
        }
    }

    #[test]
    fn all_censored_is_rejected() {
        let r = SurvivalData::new(DMatrix::zeros(2, 1), vec![1.0, 2.0], vec![false, false]);
        assert!(matches!(r, Err(Error::NoFailures)));
    }

    #[test]
    fn value_at_zero() {
        let sd = data(&[0.3, -1.0], 1, &[1.0, 2.0], &[true, true]);
        let obj = CoxObjective::new(sd).unwrap();
        let v = obj.partial_loglik(&DVector::zeros(1)).unwrap();
        assert!((v + std::f64::consts::LN_2).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sd = random_survival(&mut rng, 25, 2);
        let obj = CoxObjective::new(sd).unwrap();
        let expect: f64 = -obj
            .risk_sets()
            .events()
            .iter()
            .map(|e| e.failing.len() as f64 * (e.risk_set.len() as f64).ln())
            .sum::<f64>();
        assert!((obj.partial_loglik(&DVector::zeros(2)).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn matches_definition_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let sd = random_survival(&mut rng, 20, 3);
        let obj = CoxObjective::new(sd.clone()).unwrap();
        let beta = DVector::from_vec(vec![0.4, -0.8, 1.1]);
        assert!((obj.loglik(&beta) - naive_loglik(&sd, &beta)).abs() < 1e-10);
        let (g, h) = obj.grad_hess(&beta);
        let eps = 1e-5;
        for j in 0..3 {
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[j] += eps;
            dn[j] -= eps;
            let fd = (obj.loglik(&up) - obj.loglik(&dn)) / (2.0 * eps);
            assert!((fd - g[j]).abs() < 1e-6, "gradient {j}");
            let col = (obj.gradient(&up) - obj.gradient(&dn)) / (2.0 * eps);
            for i in 0..3 {
                assert!((col[i] - h[(i, j)]).abs() < 1e-5);
            }
        }
        let s = obj.score_contributions(&beta);
        for j in 0..3 {
            assert!((s.column(j).sum() - g[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn large_predictors_do_not_overflow() {
        let sd = data(&[400.0, 800.0, -300.0], 1, &[1.0, 2.0, 3.0], &[true, true, true]);
        let obj = CoxObjective::new(sd).unwrap();
        let beta = DVector::from_vec(vec![3.0]);
        let v = obj.loglik(&beta);
        assert!(v.is_finite());
        assert!(obj.grad_hess(&beta).1.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ties_use_shared_denominator() {
        let sd = data(&[1.0, 0.0, 2.0], 1, &[1.0, 1.0, 2.0], &[true, true, true]);
        let obj = CoxObjective::new(sd.clone()).unwrap();
        let beta = DVector::from_vec(vec![0.5]);
        // naive_loglik treats each tied failure with the same risk set: Breslow
        assert!((obj.loglik(&beta) - naive_loglik(&sd, &beta)).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn concave_and_shift_invariant(seed in 0u64..10_000, t in 0.05f64..1.0, shift in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sd = random_survival(&mut rng, 15, 2);
            let obj = CoxObjective::new(sd.clone()).unwrap();
            let beta = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let dir = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let second = obj.loglik(&(&beta + &dir * t)) - 2.0 * obj.loglik(&beta) + obj.loglik(&(&beta - &dir * t));
            prop_assert!(second <= 1e-8);

            let mut x = sd.x().clone();
            x.column_mut(1).add_scalar_mut(shift);
            let shifted = CoxObjective::new(SurvivalData::new(x, sd.time().to_vec(), sd.status().to_vec()).unwrap()).unwrap();
            prop_assert!((shifted.loglik(&beta) - obj.loglik(&beta)).abs() < 1e-10);
        }
    }
}
