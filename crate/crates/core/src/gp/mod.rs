//! Gaussian-process posterior over every (solution, input model) pair.
//!
//! The state keeps the mean vector and full covariance matrix in
//! solution-major flat order (`solution * B + model`). New simulation output
//! is absorbed with an exact rank-one information update; the whole posterior
//! is recomputed from the log periodically to bound rounding drift.

pub mod checkpoint;
mod log;
pub mod mle;

pub use self::log::{ObservationRow, PairRecord, SimulationLog};

use crate::exec::{column_blocks, Execution};
use crate::kernels::{cholesky_with_jitter, KernelError, KernelMatrices, KernelParams, PairIndex};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Variances of sample means are floored at this multiple of `tau^2`.
pub const NOISE_FLOOR: f64 = 1e-12;
/// Incremental updates between full recomputations.
pub const DEFAULT_REFRESH_EVERY: usize = 500;
/// Tolerated relative Frobenius drift of the incremental covariance.
pub const DRIFT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("no simulation output has been logged")]
    NoData,
    #[error("predictive update is degenerate at pair {0:?}")]
    Degenerate(PairIndex),
    #[error("pair {pair:?} is outside the {solutions} x {models} grid")]
    OutOfRange {
        pair: PairIndex,
        solutions: usize,
        models: usize,
    },
    #[error("likelihood optimisation failed: {0}")]
    Optimizer(String),
}

/// `cov -= w^T w`, one column block at a time.
fn subtract_gram_tr(exec: Execution, cov: &mut DMatrix<f64>, w: &DMatrix<f64>) {
    let m = cov.nrows();
    column_blocks(exec, cov.as_mut_slice(), m, |j0, mut block| {
        let cols = block.ncols();
        block.gemm_tr(-1.0, w, &w.columns(j0, cols), 1.0);
    });
}

/// `L^{-1} rhs` for a lower-triangular `L`, solved column block by block.
fn solve_lower(exec: Execution, l: &DMatrix<f64>, rhs: &mut DMatrix<f64>) {
    let n = rhs.nrows();
    column_blocks(exec, rhs.as_mut_slice(), n, |_, mut block| {
        l.solve_lower_triangular_mut(&mut block);
    });
}

/// Posterior mean and covariance at `query` given conditioning `rows`.
///
/// Uses the kriging predictor `beta0 + K_qO (K_OO + diag(noise))^{-1} (Y - beta0)`.
/// Rows may repeat a pair.
pub fn posterior(
    rows: &[ObservationRow],
    beta0: f64,
    km: &KernelMatrices,
    query: &[PairIndex],
    exec: Execution,
) -> Result<(DVector<f64>, DMatrix<f64>), GpError> {
    let mut cov = km.gram(query, exec);
    let mut mean = DVector::from_element(query.len(), beta0);
    if rows.is_empty() {
        return Ok((mean, cov));
    }
    let obs: Vec<PairIndex> = rows.iter().map(|r| r.pair).collect();
    let mut a = km.gram(&obs, exec);
    for (i, r) in rows.iter().enumerate() {
        a[(i, i)] += r.noise_var;
    }
    let (chol, _) = cholesky_with_jitter(a, km.tau_sq)?;
    let l = chol.l();
    let mut w = km.cross(&obs, query, exec);
    solve_lower(exec, &l, &mut w);
    let mut resid = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.mean - beta0));
    l.solve_lower_triangular_mut(&mut resid);
    mean.gemv_tr(1.0, &w, &resid, 1.0);
    subtract_gram_tr(exec, &mut cov, &w);
    Ok((mean, cov))
}

/// Rank-one or rank-two predictive change of the covariance:
/// `V_{t+1} = V_t - sum_k u_k u_k^T`. The same factors give the predictive
/// covariance `sum_k u_k u_k^T` of the next posterior mean.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRank {
    pub factors: Vec<DVector<f64>>,
}

impl LowRank {
    /// `sum_k (u_k[p] - u_k[q])^2`: the drop in the variance of `eta_p - eta_q`.
    pub fn contrast_sq(&self, p: usize, q: usize) -> f64 {
        self.factors.iter().map(|u| (u[p] - u[q]).powi(2)).sum()
    }

    /// `V_t - sum_k u_k u_k^T` as a dense matrix.
    pub fn next_cov(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = v.clone();
        for u in &self.factors {
            out.ger(-1.0, u, u, 1.0);
        }
        out
    }
}

/// Single sampling at flat pair `p` with mean-noise variance `s = v / R`.
pub fn rank1_factor(v: &DMatrix<f64>, p: usize, s: f64) -> Option<LowRank> {
    let denom = s + v[(p, p)];
    if !(denom > 0.0) {
        return None;
    }
    Some(LowRank {
        factors: vec![v.column(p) / denom.sqrt()],
    })
}

/// Pairwise sampling at flat pairs `p1`, `p2` with mean-noise variances
/// `s1`, `s2`. Returns `U = C D^{-T}` so that `C M^{-1} C^T = U U^T`, where
/// `M = D D^T = I + S^{-1/2} V_[p1,p2] S^{-1/2}`.
pub fn rank2_factor(v: &DMatrix<f64>, p1: usize, p2: usize, s1: f64, s2: f64) -> Option<LowRank> {
    if !(s1 > 0.0 && s2 > 0.0) {
        return None;
    }
    let (r1, r2) = (s1.sqrt(), s2.sqrt());
    let m11 = 1.0 + v[(p1, p1)] / s1;
    let m12 = v[(p1, p2)] / (r1 * r2);
    let m22 = 1.0 + v[(p2, p2)] / s2;
    let d11 = m11.sqrt();
    let d21 = m12 / d11;
    let d22_sq = m22 - d21 * d21;
    if !(d11 > 0.0 && d22_sq > 0.0) {
        return None;
    }
    let d22 = d22_sq.sqrt();
    let c1 = v.column(p1) / r1;
    let c2 = v.column(p2) / r2;
    let u1 = &c1 / d11;
    let u2 = (c2 - &u1 * d21) / d22;
    Some(LowRank {
        factors: vec![u1, u2],
    })
}

/// Posterior over the full `|X| x B` grid plus the log it conditions on.
#[derive(Clone, Debug)]
pub struct GpState {
    num_solutions: usize,
    num_models: usize,
    km: KernelMatrices,
    pub params: KernelParams,
    pub beta0: f64,
    pub log: SimulationLog,
    mu: DVector<f64>,
    v: DMatrix<f64>,
    exec: Execution,
    refresh_every: usize,
    updates_since_refresh: usize,
    last_drift: Option<f64>,
}

impl GpState {
    pub fn new(
        km: KernelMatrices,
        params: KernelParams,
        beta0: f64,
        log: SimulationLog,
        exec: Execution,
    ) -> Result<Self, GpError> {
        let num_solutions = km.gx.nrows();
        let num_models = km.num_models();
        let n = num_solutions * num_models;
        let mut state = Self {
            num_solutions,
            num_models,
            km,
            params,
            beta0,
            log,
            mu: DVector::zeros(n),
            v: DMatrix::zeros(n, n),
            exec,
            refresh_every: DEFAULT_REFRESH_EVERY,
            updates_since_refresh: 0,
            last_drift: None,
        };
        state.refresh()?;
        Ok(state)
    }

    /// A state carrying an explicitly supplied posterior, such as a
    /// hand-built test case. A later `refresh` replaces `mu` and `v` with the
    /// posterior implied by `km` and `log`.
    pub fn from_snapshot(
        km: KernelMatrices,
        params: KernelParams,
        beta0: f64,
        log: SimulationLog,
        mu: DVector<f64>,
        v: DMatrix<f64>,
        exec: Execution,
    ) -> Result<Self, GpError> {
        let num_solutions = km.gx.nrows();
        let num_models = km.num_models();
        let n = num_solutions * num_models;
        for found in [mu.len(), v.nrows(), v.ncols()] {
            if found != n {
                return Err(KernelError::DimensionMismatch { expected: n, found }.into());
            }
        }
        Ok(Self {
            num_solutions,
            num_models,
            km,
            params,
            beta0,
            log,
            mu,
            v,
            exec,
            refresh_every: DEFAULT_REFRESH_EVERY,
            updates_since_refresh: 0,
            last_drift: None,
        })
    }

    pub fn with_refresh_every(mut self, every: usize) -> Self {
        self.refresh_every = every.max(1);
        self
    }

    pub fn num_solutions(&self) -> usize {
        self.num_solutions
    }

    pub fn num_models(&self) -> usize {
        self.num_models
    }

    pub fn num_pairs(&self) -> usize {
        self.num_solutions * self.num_models
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn kernel(&self) -> &KernelMatrices {
        &self.km
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    /// Relative Frobenius distance between the incremental and recomputed
    /// covariance at the most recent refresh that followed updates.
    pub fn last_drift(&self) -> Option<f64> {
        self.last_drift
    }

    pub fn noise_floor(&self) -> f64 {
        NOISE_FLOOR * self.params.tau_sq
    }

    pub fn flat(&self, solution: usize, model: usize) -> usize {
        solution * self.num_models + model
    }

    pub fn mean_at(&self, solution: usize, model: usize) -> f64 {
        self.mu[self.flat(solution, model)]
    }

    pub fn check_pair(&self, pair: PairIndex) -> Result<(), GpError> {
        if pair.solution >= self.num_solutions || pair.model >= self.num_models {
            return Err(GpError::OutOfRange {
                pair,
                solutions: self.num_solutions,
                models: self.num_models,
            });
        }
        Ok(())
    }

    /// Recomputes mean and covariance from the log.
    pub fn refresh(&mut self) -> Result<(), GpError> {
        let all: Vec<PairIndex> = (0..self.num_pairs())
            .map(|p| PairIndex::from_flat(p, self.num_models))
            .collect();
        let rows = self.log.rows(self.noise_floor());
        let (mu, mut v) = posterior(&rows, self.beta0, &self.km, &all, self.exec)?;
        clamp_diagonal(&mut v);
        if self.updates_since_refresh > 0 {
            let diff = (&self.v - &v).norm();
            let drift = diff / v.norm().max(f64::MIN_POSITIVE);
            if drift > DRIFT_TOLERANCE {
                ::log::warn!("incremental covariance drifted by {drift:e} before refresh");
            }
            self.last_drift = Some(drift);
        }
        self.mu = mu;
        self.v = v;
        self.updates_since_refresh = 0;
        Ok(())
    }

    /// Replaces hyperparameters (e.g. after a refit) and recomputes.
    pub fn reset_params(&mut self, km: KernelMatrices, params: KernelParams, beta0: f64) -> Result<(), GpError> {
        self.km = km;
        self.params = params;
        self.beta0 = beta0;
        self.updates_since_refresh = 0;
        self.refresh()
    }

    /// Logs new replications at `pair` and conditions the posterior on them.
    ///
    /// A re-sampled pair's old row is swapped for its merged row in
    /// information form: with precisions `a = 1 / noise_var`,
    /// `V <- V - V e e^T V da / (1 + da V_pp)` and
    /// `mu <- mu + V e (g - da mu_p) / (1 + da V_pp)`, where
    /// `da = a_new - a_old` and `g = a_new Y_new - a_old Y_old`.
    pub fn observe(&mut self, pair: PairIndex, samples: &[f64]) -> Result<(), GpError> {
        self.check_pair(pair)?;
        let floor = self.noise_floor();
        let (i, before) = self.log.record(pair, samples);
        let new_row = log::row_of(&self.log.records()[i], floor);
        let (a_old, y_old) = before.map_or((0.0, 0.0), |r| {
            let row = log::row_of(&r, floor);
            (1.0 / row.noise_var, row.mean)
        });
        let a_new = 1.0 / new_row.noise_var;
        let da = a_new - a_old;
        let g = a_new * new_row.mean - a_old * y_old;
        let p = pair.flat(self.num_models);
        let denom = 1.0 + da * self.v[(p, p)];
        if !(denom > 0.0) {
            return Err(GpError::Degenerate(pair));
        }
        let col = self.v.column(p).clone_owned();
        let shift = (g - da * self.mu[p]) / denom;
        self.mu.axpy(shift, &col, 1.0);
        let scale = da / denom;
        let n = self.num_pairs();
        column_blocks(self.exec, self.v.as_mut_slice(), n, |j0, mut block| {
            for c in 0..block.ncols() {
                let f = -scale * col[j0 + c];
                block.column_mut(c).axpy(f, &col, 1.0);
            }
        });
        clamp_diagonal(&mut self.v);
        self.updates_since_refresh += 1;
        if self.updates_since_refresh >= self.refresh_every {
            self.refresh()?;
        }
        Ok(())
    }

    /// Standard deviation of `eta(xhat, P_b) - eta(x, P_b)`.
    pub fn pairwise_sigma(&self, xhat: usize, x: usize, b: usize) -> f64 {
        pairwise_sigma(&self.v, self.flat(xhat, b), self.flat(x, b))
    }

    /// Plug-in replication variance at every pair, flat order: the pair's own
    /// `S^2`, else the mean over simulated pairs of the same solution, else
    /// the global mean.
    pub fn noise_table(&self) -> Result<Vec<f64>, GpError> {
        if self.log.is_empty() {
            return Err(GpError::NoData);
        }
        let floor = self.noise_floor();
        let mut own = vec![None; self.num_pairs()];
        let mut by_solution = vec![(0.0, 0usize); self.num_solutions];
        let mut global = 0.0;
        for r in self.log.records() {
            let s2 = r.sample_variance();
            own[r.pair.flat(self.num_models)] = Some(s2);
            by_solution[r.pair.solution].0 += s2;
            by_solution[r.pair.solution].1 += 1;
            global += s2;
        }
        let global = global / self.log.len() as f64;
        Ok((0..self.num_pairs())
            .map(|p| {
                let x = p / self.num_models;
                let v = own[p].unwrap_or_else(|| {
                    let (sum, count) = by_solution[x];
                    if count > 0 {
                        sum / count as f64
                    } else {
                        global
                    }
                });
                v.max(floor)
            })
            .collect())
    }

    pub fn plugin_noise(&self, pair: PairIndex) -> Result<f64, GpError> {
        self.check_pair(pair)?;
        Ok(self.noise_table()?[pair.flat(self.num_models)])
    }

    pub fn rank1_predict(&self, pair: PairIndex, noise: f64, reps: usize) -> Result<LowRank, GpError> {
        self.check_pair(pair)?;
        rank1_factor(&self.v, pair.flat(self.num_models), noise / reps as f64)
            .ok_or(GpError::Degenerate(pair))
    }

    pub fn rank2_predict(
        &self,
        xhat_pair: PairIndex,
        x_pair: PairIndex,
        noise_xhat: f64,
        noise_x: f64,
        reps: usize,
    ) -> Result<LowRank, GpError> {
        self.check_pair(xhat_pair)?;
        self.check_pair(x_pair)?;
        let r = reps as f64;
        rank2_factor(
            &self.v,
            xhat_pair.flat(self.num_models),
            x_pair.flat(self.num_models),
            noise_xhat / r,
            noise_x / r,
        )
        .ok_or(GpError::Degenerate(x_pair))
    }

    /// `sigma_{t+1}(xhat, x, b)` after the hypothetical update `update`.
    pub fn sigma_next(&self, update: &LowRank, xhat: usize, x: usize, b: usize) -> f64 {
        let (p, q) = (self.flat(xhat, b), self.flat(x, b));
        let now = pairwise_var(&self.v, p, q);
        (now - update.contrast_sq(p, q)).max(0.0).sqrt()
    }
}

fn clamp_diagonal(v: &mut DMatrix<f64>) {
    for i in 0..v.nrows() {
        if v[(i, i)] < 0.0 {
            v[(i, i)] = 0.0;
        }
    }
}

fn pairwise_var(v: &DMatrix<f64>, p: usize, q: usize) -> f64 {
    if p == q {
        return 0.0;
    }
    (v[(p, p)] - 2.0 * v[(p, q)] + v[(q, q)]).max(0.0)
}

/// `sqrt((e_p - e_q)^T V (e_p - e_q))`, clamped at zero.
pub fn pairwise_sigma(v: &DMatrix<f64>, p: usize, q: usize) -> f64 {
    pairwise_var(v, p, q).sqrt()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::input_model::{DivergenceKind, JointInputModel, ProbabilitySimplex};
    use crate::kernels::{DivergenceTable, KernelContext, SourceMetric};
    use crate::stats::{substream, StreamTag};
    use rand::Rng;

    pub(crate) fn small_context(nx: usize, nb: usize, seed: u64) -> KernelContext {
        let mut rng = substream(seed, StreamTag::PosteriorDraws, 0, 0);
        let models: Vec<JointInputModel> = (0..nb)
            .map(|_| JointInputModel {
                per_source: vec![ProbabilitySimplex::normalized(
                    (0..4).map(|_| rng.random::<f64>() + 0.05).collect(),
                )
                .unwrap()],
            })
            .collect();
        let metrics = [SourceMetric::Divergence(DivergenceKind::SqHellinger)];
        let table = DivergenceTable::build(&models, &metrics, Execution::Sequential).unwrap();
        KernelContext::new((0..nx).map(|x| vec![x as f64]).collect(), table)
    }

    fn params() -> KernelParams {
        KernelParams {
            tau_sq: 2.0,
            lambda: vec![3.0],
            vartheta: vec![0.05],
        }
    }

    fn all_pairs(nx: usize, nb: usize) -> Vec<PairIndex> {
        (0..nx * nb).map(|p| PairIndex::from_flat(p, nb)).collect()
    }

    #[test]
    fn empty_log_gives_prior() {
        let ctx = small_context(3, 2, 1);
        let km = ctx.evaluate(&params()).unwrap();
        let q = all_pairs(3, 2);
        let (m, c) = posterior(&[], 1.5, &km, &q, Execution::Sequential).unwrap();
        assert!(m.iter().all(|&x| x == 1.5));
        assert_eq!(c, km.gram(&q, Execution::Sequential));
    }

    #[test]
    fn noiseless_data_is_interpolated() {
        let ctx = small_context(4, 3, 2);
        let km = ctx.evaluate(&params()).unwrap();
        let rows: Vec<ObservationRow> = [(0, 0, 1.0), (2, 1, -0.5), (3, 2, 2.5)]
            .iter()
            .map(|&(x, b, y)| ObservationRow {
                pair: PairIndex::new(x, b),
                mean: y,
                noise_var: 1e-12,
            })
            .collect();
        let q = all_pairs(4, 3);
        let (m, c) = posterior(&rows, 0.3, &km, &q, Execution::Parallel).unwrap();
        for r in &rows {
            let p = r.pair.flat(3);
            assert!((m[p] - r.mean).abs() < 1e-6, "{} vs {}", m[p], r.mean);
            assert!(c[(p, p)].abs() < 1e-6);
        }
        let prior = km.gram(&q, Execution::Sequential);
        for p in 0..q.len() {
            assert!(c[(p, p)] <= prior[(p, p)] + 1e-12);
        }
    }

    #[test]
    fn sequential_and_parallel_posteriors_match() {
        let ctx = small_context(5, 4, 3);
        let km = ctx.evaluate(&params()).unwrap();
        let rows: Vec<ObservationRow> = (0..7)
            .map(|i| ObservationRow {
                pair: PairIndex::from_flat((i * 3) % 20, 4),
                mean: i as f64 * 0.4,
                noise_var: 0.1,
            })
            .collect();
        let q = all_pairs(5, 4);
        let a = posterior(&rows, 0.0, &km, &q, Execution::Sequential).unwrap();
        let b = posterior(&rows, 0.0, &km, &q, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pairwise_sigma_examples() {
        let v = DMatrix::<f64>::identity(4, 4) * 3.0;
        assert_eq!(pairwise_sigma(&v, 1, 1), 0.0);
        assert!((pairwise_sigma(&v, 0, 2) - 6.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rank1_on_identity() {
        let v = DMatrix::<f64>::identity(2, 2);
        let next = rank1_factor(&v, 0, 1.0).unwrap().next_cov(&v);
        assert!((next - DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0])).norm() < 1e-15);
        let exhausted = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let upd = rank1_factor(&exhausted, 0, 1.0).unwrap();
        assert_eq!(upd.next_cov(&exhausted), exhausted);
        assert_eq!(upd.factors[0].norm(), 0.0);
        assert!(rank1_factor(&exhausted, 0, 0.0).is_none());
    }

    #[test]
    fn rank2_reduces_to_two_rank1_when_uncorrelated() {
        let v = DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 0.0, 0.5, 0.0, 1.0, 0.3, 0.5, 0.3, 1.5],
        );
        let both = rank2_factor(&v, 0, 1, 0.4, 0.7).unwrap().next_cov(&v);
        let first = rank1_factor(&v, 0, 0.4).unwrap().next_cov(&v);
        let second = rank1_factor(&first, 1, 0.7).unwrap().next_cov(&first);
        assert!((both - second).norm() < 1e-10);
    }

    #[test]
    fn rank2_large_replication_limit() {
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.8, 0.8, 1.0]);
        let upd = rank2_factor(&v, 0, 1, 1e-9, 1e-9).unwrap();
        let next = upd.next_cov(&v);
        assert!(next[(0, 0)].abs() < 1e-8 && next[(1, 1)].abs() < 1e-8);
    }

    fn seeded_state(exec: Execution) -> GpState {
        let ctx = small_context(5, 4, 4);
        let km = ctx.evaluate(&params()).unwrap();
        let mut log = SimulationLog::new();
        let mut rng = substream(5, StreamTag::Replication, 0, 0);
        for p in [0usize, 5, 9, 14, 18] {
            let ys: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + p as f64 * 0.1).collect();
            log.record(PairIndex::from_flat(p, 4), &ys);
        }
        GpState::new(km, params(), 0.5, log, exec).unwrap()
    }

    #[test]
    fn incremental_update_matches_recompute() {
        let mut state = seeded_state(Execution::Parallel);
        let mut rng = substream(6, StreamTag::Replication, 0, 0);
        // fresh pairs and a re-sampled one
        for p in [3usize, 5, 11, 3, 0] {
            let ys: Vec<f64> = (0..4).map(|_| 2.0 * rng.random::<f64>()).collect();
            state.observe(PairIndex::from_flat(p, 4), &ys).unwrap();
        }
        let mu_inc = state.mu().clone();
        let v_inc = state.v().clone();
        state.refresh().unwrap();
        assert!((&mu_inc - state.mu()).norm() / state.mu().norm() < 1e-9);
        assert!((&v_inc - state.v()).norm() / state.v().norm() < 1e-9);
        assert!(state.last_drift().unwrap() < 1e-9);
    }

    #[test]
    fn refresh_every_triggers() {
        let mut state = seeded_state(Execution::Sequential).with_refresh_every(2);
        state.observe(PairIndex::new(1, 1), &[0.1, 0.2]).unwrap();
        assert!(state.last_drift().is_none());
        state.observe(PairIndex::new(2, 1), &[0.1, 0.3]).unwrap();
        assert!(state.last_drift().is_some());
    }

    #[test]
    fn noise_plugin_rules() {
        let ctx = small_context(3, 3, 7);
        let km = ctx.evaluate(&params()).unwrap();
        let empty = GpState::new(km.clone(), params(), 0.0, SimulationLog::new(), Execution::Sequential).unwrap();
        assert_eq!(empty.plugin_noise(PairIndex::new(0, 0)), Err(GpError::NoData));

        let mut log = SimulationLog::new();
        // S^2 = 2, 4, 6 at solution 0
        log.record(PairIndex::new(0, 0), &[0.0, 2.0]);
        log.record(PairIndex::new(0, 1), &[0.0, 8f64.sqrt()]);
        log.record(PairIndex::new(0, 2), &[0.0, 12f64.sqrt()]);
        // S^2 = 1 at solution 1
        log.record(PairIndex::new(1, 0), &[0.0, 2f64.sqrt()]);
        let state = GpState::new(km, params(), 0.0, log, Execution::Sequential).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(state.plugin_noise(PairIndex::new(0, 1)).unwrap(), 4.0));
        assert!(close(state.plugin_noise(PairIndex::new(1, 2)).unwrap(), 1.0));
        // unsimulated solution: pooled over all four records
        assert!(close(state.plugin_noise(PairIndex::new(2, 0)).unwrap(), 13.0 / 4.0));
        assert!(state.plugin_noise(PairIndex::new(3, 0)).is_err());
    }

    #[test]
    fn noise_fallback_global_mean() {
        let ctx = small_context(3, 2, 8);
        let km = ctx.evaluate(&params()).unwrap();
        let mut log = SimulationLog::new();
        log.record(PairIndex::new(0, 0), &[0.0, 2f64.sqrt()]);
        log.record(PairIndex::new(1, 1), &[0.0, 6f64.sqrt()]);
        let state = GpState::new(km, params(), 0.0, log, Execution::Sequential).unwrap();
        assert!((state.plugin_noise(PairIndex::new(2, 0)).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_next_never_exceeds_current() {
        let state = seeded_state(Execution::Sequential);
        let noise = state.noise_table().unwrap();
        for p in 0..state.num_pairs() {
            let pair = PairIndex::from_flat(p, 4);
            let upd1 = state.rank1_predict(pair, noise[p], 10).unwrap();
            for x in 0..5 {
                for b in 0..4 {
                    assert!(state.sigma_next(&upd1, 0, x, b) <= state.pairwise_sigma(0, x, b) + 1e-12);
                }
            }
            if pair.solution != 0 {
                let hat = PairIndex::new(0, pair.model);
                let upd2 = state
                    .rank2_predict(hat, pair, noise[hat.flat(4)], noise[p], 10)
                    .unwrap();
                for x in 0..5 {
                    assert!(state.sigma_next(&upd2, 0, x, pair.model) <= state.pairwise_sigma(0, x, pair.model) + 1e-12);
                }
            }
        }
    }
}
