//! The sequential procedure, its ablations and the naive baseline.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{decide, write_trace_csv, ModelRule, TraceRecord};
use crate::exec::{map_indexed, Execution};
use crate::gp::checkpoint::{Checkpoint, CheckpointError};
use crate::gp::mle::{fit_mle, MleOptions};
use crate::gp::{posterior, GpError, GpState, SimulationLog, DEFAULT_REFRESH_EVERY};
use crate::input_model::{
    build_posterior, map_joint, sample_joint, DirichletPosterior, DivergenceKind, InputError, JointInputModel,
};
use crate::kernels::{DivergenceTable, KernelContext, KernelError, PairIndex, SourceMetric};
use crate::riskset::{
    alpha_is_multiple_of_inverse_b, estimate_risk_set, oracle_risk_set, PosteriorView, RiskSetEstimate,
};
use crate::simulators::{replicate_batch, SimulationError, SimulationProblem};
use crate::stats::{substream, RunningMoments, StreamTag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Srsi,
    SrsiM,
    SrsiV,
    Nmc,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Srsi => "srsi",
            Variant::SrsiM => "srsi-m",
            Variant::SrsiV => "srsi-v",
            Variant::Nmc => "nmc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Variant::Srsi, Variant::SrsiM, Variant::SrsiV, Variant::Nmc]
            .into_iter()
            .find(|v| v.as_str() == s)
    }

    fn model_rule(self) -> Option<ModelRule> {
        match self {
            Variant::Srsi => Some(ModelRule::FoldedNormal),
            Variant::SrsiM => Some(ModelRule::Margin),
            Variant::SrsiV => Some(ModelRule::Variance),
            Variant::Nmc => None,
        }
    }
}

/// How the candidate solution is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XhatRule {
    /// Simulate every solution under the posterior mode and take the lowest
    /// sample mean (ties to the lower index).
    MapOptimum { replications: usize },
    Explicit(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    pub seed: u64,
    /// Number of posterior draws B.
    pub models: usize,
    pub n0: usize,
    pub initial_reps: usize,
    pub reps: usize,
    /// Per-iteration replication counts; the last entry repeats. Overrides `reps`.
    pub reps_schedule: Option<Vec<usize>>,
    pub alpha: f64,
    pub delta: f64,
    pub xhat: XhatRule,
    /// Total replication budget.
    pub budget: Option<u64>,
    pub max_iterations: Option<usize>,
    /// Budgets at which an intermediate estimate is recorded.
    pub checkpoints: Vec<u64>,
    pub kappa: f64,
    pub divergence: DivergenceKind,
    /// Sources whose distance compares simplex means instead of divergences.
    pub parametric_sources: Vec<usize>,
    pub mle: MleOptions,
    pub refresh_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Srsi,
            seed: 1,
            models: 101,
            n0: 100,
            initial_reps: 30,
            reps: 30,
            reps_schedule: None,
            alpha: 0.2,
            delta: 1.0,
            xhat: XhatRule::MapOptimum { replications: 100 },
            budget: None,
            max_iterations: Some(100),
            checkpoints: Vec::new(),
            kappa: 1.0,
            divergence: DivergenceKind::SqHellinger,
            parametric_sources: Vec::new(),
            mle: MleOptions::default(),
            refresh_every: DEFAULT_REFRESH_EVERY,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProcedureError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Input(#[from] InputError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("simulation failed: {source}")]
    Simulation {
        source: SimulationError,
        /// Posterior at the time of failure, when one existed.
        checkpoint: Option<Box<Checkpoint>>,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<SimulationError> for ProcedureError {
    fn from(source: SimulationError) -> Self {
        ProcedureError::Simulation { source, checkpoint: None }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ProcedureError> {
        let bad = |m: String| Err(ProcedureError::Config(m));
        if self.models < 1 {
            return bad("models (B) must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be nonnegative, got {}", self.delta));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa must be positive, got {}", self.kappa));
        }
        if let XhatRule::MapOptimum { replications } = self.xhat {
            if replications < 1 {
                return bad("map-optimum replications must be at least 1".into());
            }
        }
        if self.variant == Variant::Nmc {
            if self.budget.is_none() && self.checkpoints.is_empty() {
                return bad("nmc needs a budget".into());
            }
            return Ok(());
        }
        if self.n0 < 2 || self.initial_reps < 2 {
            return bad("n0 and initial_reps must be at least 2".into());
        }
        if self.reps < 2 || self.reps_schedule.as_ref().is_some_and(|s| s.is_empty() || s.iter().any(|&r| r < 2)) {
            return bad("replications per iteration must be at least 2".into());
        }
        if self.budget.is_none() && self.max_iterations.is_none() {
            return bad("set a budget, max_iterations, or both".into());
        }
        if let Some(b) = self.budget {
            let initial = (self.n0 * self.initial_reps) as u64;
            if b < initial {
                return bad(format!("budget {b} is below the initial design cost n0*r = {initial}"));
            }
        }
        Ok(())
    }

    /// Replications for iteration `t` (from 1).
    pub fn reps_at(&self, t: usize) -> usize {
        match &self.reps_schedule {
            Some(s) if !s.is_empty() => s[(t - 1).min(s.len() - 1)],
            _ => self.reps,
        }
    }

    pub fn alpha_warning(&self) -> Option<String> {
        alpha_is_multiple_of_inverse_b(self.alpha, self.models).then(|| {
            format!(
                "alpha = {} is a multiple of 1/B (B = {}); the estimator may not converge to the risk set",
                self.alpha, self.models
            )
        })
    }
}

/// Estimate recorded the first time the spent replications reach a budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSnapshot {
    pub budget: u64,
    pub replications: u64,
    pub estimate: RiskSetEstimate,
}

#[derive(Debug)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub xhat: usize,
    pub labels: Vec<String>,
    pub estimate: RiskSetEstimate,
    pub snapshots: Vec<BudgetSnapshot>,
    pub trace: Vec<TraceRecord>,
    /// Replications spent on each solution.
    pub frequencies: Vec<u64>,
    pub total_replications: u64,
    pub iterations: usize,
    pub models: Vec<JointInputModel>,
    pub state: Option<GpState>,
    pub elapsed: Duration,
}

impl RunResult {
    pub fn checkpoint(&self) -> Option<Checkpoint> {
        self.state
            .as_ref()
            .map(|s| Checkpoint::from_state(s, self.xhat, self.estimate.alpha, self.estimate.delta))
    }
}

/// Posterior draws and candidate shared by every variant at a given seed.
pub struct Setup {
    pub posteriors: Vec<DirichletPosterior>,
    pub models: Vec<JointInputModel>,
    pub xhat: usize,
    pub context: KernelContext,
}

fn source_metrics<P: SimulationProblem + ?Sized>(problem: &P, config: &RunConfig) -> Result<Vec<SourceMetric>, ProcedureError> {
    let sources = problem.data().len();
    if let Some(&bad) = config.parametric_sources.iter().find(|&&l| l >= sources) {
        return Err(ProcedureError::Config(format!("parametric source {bad} does not exist")));
    }
    Ok((0..sources)
        .map(|l| {
            if config.parametric_sources.contains(&l) {
                SourceMetric::Parametric {
                    support: problem.data()[l].distinct_support.clone(),
                }
            } else {
                SourceMetric::Divergence(config.divergence)
            }
        })
        .collect())
}

/// Simulates every solution under the posterior mode and returns the index
/// of the smallest sample mean.
pub fn map_optimum<P: SimulationProblem + ?Sized>(
    problem: &P,
    posteriors: &[DirichletPosterior],
    replications: usize,
    seed: u64,
    exec: Execution,
) -> Result<(usize, Vec<f64>), ProcedureError> {
    let mode = map_joint(posteriors)?;
    let means = (0..problem.num_solutions())
        .map(|x| {
            let y = replicate_batch(problem, x, &mode, seed, StreamTag::MapOptimum, x as u64, 0, replications, exec)?;
            Ok(y.iter().sum::<f64>() / y.len() as f64)
        })
        .collect::<Result<Vec<f64>, ProcedureError>>()?;
    let mut best = 0;
    for (x, &m) in means.iter().enumerate() {
        if m < means[best] {
            best = x;
        }
    }
    Ok((best, means))
}

pub fn prepare<P: SimulationProblem + ?Sized>(
    config: &RunConfig,
    problem: &P,
    exec: Execution,
) -> Result<Setup, ProcedureError> {
    config.validate()?;
    let nx = problem.num_solutions();
    let posteriors = problem
        .data()
        .iter()
        .map(|d| build_posterior(d, &vec![config.kappa; d.support_size()]))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = substream(config.seed, StreamTag::PosteriorDraws, 0, 0);
    let models = sample_joint(&posteriors, config.models, &mut rng);
    let xhat = match config.xhat {
        XhatRule::Explicit(x) if x < nx => x,
        XhatRule::Explicit(x) => {
            return Err(ProcedureError::Config(format!("xhat index {x} outside 0..{nx}")));
        }
        XhatRule::MapOptimum { replications } => map_optimum(problem, &posteriors, replications, config.seed, exec)?.0,
    };
    let metrics = source_metrics(problem, config)?;
    let table = DivergenceTable::build(&models, &metrics, exec)?;
    let solutions = (0..nx).map(|x| problem.solution_coordinates(x)).collect();
    Ok(Setup {
        posteriors,
        models,
        xhat,
        context: KernelContext::new(solutions, table),
    })
}

/// `n0` distinct pairs; every solution gets at least `n0 / |X|` of them.
pub fn initial_design<R: Rng + ?Sized>(
    num_solutions: usize,
    num_models: usize,
    n0: usize,
    rng: &mut R,
) -> Result<Vec<PairIndex>, ProcedureError> {
    if n0 > num_solutions * num_models {
        return Err(ProcedureError::Config(format!(
            "n0 = {n0} exceeds the {} available pairs",
            num_solutions * num_models
        )));
    }
    let per = n0 / num_solutions;
    let extra = n0 % num_solutions;
    let bonus: Vec<bool> = {
        let mut b = vec![false; num_solutions];
        for x in sample(rng, num_solutions, extra) {
            b[x] = true;
        }
        b
    };
    let mut pairs = Vec::with_capacity(n0);
    for (x, &plus) in bonus.iter().enumerate() {
        let take = per + plus as usize;
        let mut chosen = sample(rng, num_models, take).into_vec();
        chosen.sort_unstable();
        pairs.extend(chosen.into_iter().map(|b| PairIndex::new(x, b)));
    }
    Ok(pairs)
}

fn simulate_pair<P: SimulationProblem + ?Sized>(
    problem: &P,
    models: &[JointInputModel],
    log: &SimulationLog,
    pair: PairIndex,
    reps: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<f64>, SimulationError> {
    let nb = models.len();
    let done = log.get(pair).map_or(0, |r| r.replications());
    replicate_batch(
        problem,
        pair.solution,
        &models[pair.model],
        seed,
        StreamTag::Replication,
        pair.flat(nb) as u64,
        done,
        reps,
        exec,
    )
}

fn snapshot(state: &GpState, xhat: usize, config: &RunConfig, budget: u64, exec: Execution) -> Result<BudgetSnapshot, GpError> {
    let mut fresh = state.clone();
    fresh.refresh()?;
    Ok(BudgetSnapshot {
        budget,
        replications: state.log.total_replications(),
        estimate: estimate_risk_set(&fresh, xhat, config.alpha, config.delta, exec),
    })
}

/// Runs SRSI or one of its ablations.
pub fn run_srsi<P: SimulationProblem + ?Sized>(
    config: &RunConfig,
    problem: &P,
    exec: Execution,
) -> Result<RunResult, ProcedureError> {
    let setup = prepare(config, problem, exec)?;
    run_srsi_with(config, problem, setup, exec)
}

pub fn run_srsi_with<P: SimulationProblem + ?Sized>(
    config: &RunConfig,
    problem: &P,
    setup: Setup,
    exec: Execution,
) -> Result<RunResult, ProcedureError> {
    let started = Instant::now();
    let rule = config
        .variant
        .model_rule()
        .ok_or_else(|| ProcedureError::Config("run_srsi needs a sequential variant".into()))?;
    let Setup { models, xhat, context, .. } = setup;
    let nx = problem.num_solutions();
    let nb = models.len();
    let seed = config.seed;

    let mut design_rng = substream(seed, StreamTag::InitialDesign, 0, 0);
    let design = initial_design(nx, nb, config.n0, &mut design_rng)?;
    let mut log = SimulationLog::new();
    for &pair in &design {
        let y = simulate_pair(problem, &models, &log, pair, config.initial_reps, seed, exec)?;
        log.record(pair, &y);
    }
    let mle = MleOptions {
        seed,
        ..config.mle.clone()
    };
    let fit = fit_mle(&context, &log, &mle, exec)?;
    let km = context.evaluate(&fit.params)?;
    let mut state = GpState::new(km, fit.params, fit.beta0, log, exec)?.with_refresh_every(config.refresh_every);

    let mut checkpoints = config.checkpoints.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let mut pending = checkpoints.into_iter().peekable();
    let mut snapshots = Vec::new();
    let mut take_snapshots = |state: &GpState, snapshots: &mut Vec<BudgetSnapshot>| -> Result<(), GpError> {
        let spent = state.log.total_replications();
        while let Some(&b) = pending.peek() {
            if spent < b {
                break;
            }
            snapshots.push(snapshot(state, xhat, config, b, exec)?);
            pending.next();
        }
        Ok(())
    };
    take_snapshots(&state, &mut snapshots)?;

    let mut trace = Vec::new();
    let mut t = 0usize;
    loop {
        let spent = state.log.total_replications();
        if config.budget.is_some_and(|b| spent >= b) || config.max_iterations.is_some_and(|m| t >= m) {
            break;
        }
        t += 1;
        let reps = config.reps_at(t);
        let current = estimate_risk_set(&state, xhat, config.alpha, config.delta, exec);
        let decision = decide(&state, xhat, reps, &current, rule, exec)?;
        for pair in decision.pairs(xhat) {
            let y = simulate_pair(problem, &models, &state.log, pair, reps, seed, exec).map_err(|source| {
                ProcedureError::Simulation {
                    source,
                    checkpoint: Some(Box::new(Checkpoint::from_state(&state, xhat, config.alpha, config.delta))),
                }
            })?;
            state.observe(pair, &y)?;
        }
        state.log.iteration = t as u64;
        trace.push(TraceRecord {
            iteration: t as u64,
            solution: decision.solution,
            model: decision.model,
            mode: decision.mode,
            criterion: decision.criterion_value,
            set_size: current.len(),
            replications: state.log.total_replications(),
        });
        log::debug!(
            "t={t} x={} b={} mode={} crit={:e} |S|={}",
            decision.solution,
            decision.model,
            decision.mode.as_str(),
            decision.criterion_value,
            current.len()
        );
        take_snapshots(&state, &mut snapshots)?;
    }
    state.refresh()?;
    let estimate = estimate_risk_set(&state, xhat, config.alpha, config.delta, exec);
    Ok(RunResult {
        variant: config.variant,
        seed,
        xhat,
        labels: (0..nx).map(|x| problem.solution_label(x)).collect(),
        estimate,
        snapshots,
        trace,
        frequencies: state.log.solution_frequencies(nx),
        total_replications: state.log.total_replications(),
        iterations: t,
        models,
        state: Some(state),
        elapsed: started.elapsed(),
    })
}

/// Replications per pair the naive baseline affords at `budget`.
pub fn nmc_replications(budget: u64, num_solutions: usize, num_models: usize) -> Result<usize, ProcedureError> {
    let per = budget / (num_solutions * num_models) as u64;
    if per < 2 {
        return Err(ProcedureError::Config(format!(
            "budget {budget} is below 2|X|B = {}",
            2 * num_solutions * num_models
        )));
    }
    Ok(per as usize)
}

/// Indicator estimator over sample means.
pub fn nmc_estimate(means: &[f64], num_models: usize, xhat: usize, alpha: f64, delta: f64) -> RiskSetEstimate {
    let nx = means.len() / num_models;
    oracle_risk_set(|x, b| means[x * num_models + b], nx, num_models, xhat, alpha, delta)
}

pub fn run_nmc<P: SimulationProblem + ?Sized>(
    config: &RunConfig,
    problem: &P,
    exec: Execution,
) -> Result<RunResult, ProcedureError> {
    let setup = prepare(config, problem, exec)?;
    run_nmc_with(config, problem, setup, exec)
}

/// Every pair gets `budget / (|X| B)` replications. Checkpoint budgets reuse
/// the leading replications of the same streams.
pub fn run_nmc_with<P: SimulationProblem + ?Sized>(
    config: &RunConfig,
    problem: &P,
    setup: Setup,
    exec: Execution,
) -> Result<RunResult, ProcedureError> {
    let started = Instant::now();
    let Setup { models, xhat, .. } = setup;
    let nx = problem.num_solutions();
    let nb = models.len();
    let mut budgets = config.checkpoints.clone();
    budgets.extend(config.budget);
    budgets.sort_unstable();
    budgets.dedup();
    let counts = budgets
        .iter()
        .map(|&b| nmc_replications(b, nx, nb))
        .collect::<Result<Vec<_>, _>>()?;
    let most = *counts.iter().max().expect("validated budget");
    let outputs: Vec<Vec<f64>> = map_indexed(exec, nx * nb, |p| {
        let pair = PairIndex::from_flat(p, nb);
        replicate_batch(
            problem,
            pair.solution,
            &models[pair.model],
            config.seed,
            StreamTag::Replication,
            p as u64,
            0,
            most,
            Execution::Sequential,
        )
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let estimate_at = |n: usize| {
        let means: Vec<f64> = outputs
            .iter()
            .map(|y| RunningMoments::from_samples(&y[..n]).mean)
            .collect();
        nmc_estimate(&means, nb, xhat, config.alpha, config.delta)
    };
    let snapshots: Vec<BudgetSnapshot> = budgets
        .iter()
        .zip(&counts)
        .filter(|(b, _)| config.checkpoints.contains(b))
        .map(|(&budget, &n)| BudgetSnapshot {
            budget,
            replications: (n * nx * nb) as u64,
            estimate: estimate_at(n),
        })
        .collect();
    let used = config.budget.map_or(most, |b| nmc_replications(b, nx, nb).expect("checked above"));
    Ok(RunResult {
        variant: Variant::Nmc,
        seed: config.seed,
        xhat,
        labels: (0..nx).map(|x| problem.solution_label(x)).collect(),
        estimate: estimate_at(used),
        snapshots,
        trace: Vec::new(),
        frequencies: vec![(used * nb) as u64; nx],
        total_replications: (used * nx * nb) as u64,
        iterations: 0,
        models,
        state: None,
        elapsed: started.elapsed(),
    })
}

pub fn run<P: SimulationProblem + ?Sized>(
    config: &RunConfig,
    problem: &P,
    exec: Execution,
) -> Result<RunResult, ProcedureError> {
    match config.variant {
        Variant::Nmc => run_nmc(config, problem, exec),
        _ => run_srsi(config, problem, exec),
    }
}

/// Oracle risk set from exact conditional means, when the problem has them.
pub fn oracle_for<P: SimulationProblem + ?Sized>(
    problem: &P,
    models: &[JointInputModel],
    xhat: usize,
    alpha: f64,
    delta: f64,
) -> Option<RiskSetEstimate> {
    let nx = problem.num_solutions();
    let nb = models.len();
    let mut means = Vec::with_capacity(nx * nb);
    for x in 0..nx {
        for m in models {
            means.push(problem.conditional_mean(x, m)?);
        }
    }
    Some(oracle_risk_set(|x, b| means[x * nb + b], nx, nb, xhat, alpha, delta))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub runs: usize,
    /// Fraction of runs whose estimate contains the oracle set.
    pub inclusion: f64,
    /// Fraction of runs whose estimate equals the oracle set.
    pub identification: f64,
    /// Mean size of the symmetric difference.
    pub misclassification: f64,
}

/// Scores `(estimate, oracle)` pairs.
pub fn evaluate<'a, I>(pairs: I) -> Metrics
where
    I: IntoIterator<Item = (&'a RiskSetEstimate, &'a RiskSetEstimate)>,
{
    let mut m = Metrics::default();
    for (est, oracle) in pairs {
        m.runs += 1;
        let wrong = est.misclassified(oracle);
        m.inclusion += est.is_superset_of(oracle) as u8 as f64;
        m.identification += (wrong == 0) as u8 as f64;
        m.misclassification += wrong as f64;
    }
    if m.runs > 0 {
        let n = m.runs as f64;
        m.inclusion /= n;
        m.identification /= n;
        m.misclassification /= n;
    }
    m
}

/// Posterior mean and full covariance over a `|X| x B` grid.
pub struct DensePosterior {
    pub num_solutions: usize,
    pub num_models: usize,
    pub mu: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl PosteriorView for DensePosterior {
    fn num_solutions(&self) -> usize {
        self.num_solutions
    }
    fn num_models(&self) -> usize {
        self.num_models
    }
    fn mean(&self, solution: usize, model: usize) -> f64 {
        self.mu[solution * self.num_models + model]
    }
    fn pairwise_sigma(&self, xhat: usize, x: usize, model: usize) -> f64 {
        crate::gp::pairwise_sigma(&self.v, xhat * self.num_models + model, x * self.num_models + model)
    }
}

/// Evaluates the frozen posterior at `extra` fresh draws and returns the risk
/// set over those draws alone.
#[allow(clippy::too_many_arguments)]
pub fn refine<P: SimulationProblem + ?Sized>(
    problem: &P,
    config: &RunConfig,
    state: &GpState,
    models: &[JointInputModel],
    posteriors: &[DirichletPosterior],
    xhat: usize,
    extra: usize,
    exec: Execution,
) -> Result<RiskSetEstimate, ProcedureError> {
    if extra < 1 {
        return Err(ProcedureError::Config("refinement needs at least one new draw".into()));
    }
    let mut rng = substream(config.seed, StreamTag::Refinement, 0, 0);
    let fresh = sample_joint(posteriors, extra, &mut rng);
    let mut all = models.to_vec();
    all.extend(fresh);
    let metrics = source_metrics(problem, config)?;
    let table = DivergenceTable::build(&all, &metrics, exec)?;
    let nx = problem.num_solutions();
    let solutions = (0..nx).map(|x| problem.solution_coordinates(x)).collect();
    let km = KernelContext::new(solutions, table).evaluate(&state.params)?;
    let nb = models.len();
    let query: Vec<PairIndex> = (0..nx)
        .flat_map(|x| (0..extra).map(move |b| PairIndex::new(x, nb + b)))
        .collect();
    let rows = state.log.rows(state.noise_floor());
    let (mu, v) = posterior(&rows, state.beta0, &km, &query, exec)?;
    let dense = DensePosterior {
        num_solutions: nx,
        num_models: extra,
        mu,
        v,
    };
    Ok(estimate_risk_set(&dense, xhat, config.alpha, config.delta, exec))
}

fn create(dir: &Path, name: &str) -> io::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

pub fn write_frequencies_csv<W: Write>(mut w: W, labels: &[String], freq: &[u64]) -> io::Result<()> {
    writeln!(w, "solution,label,replications")?;
    for (x, (l, f)) in labels.iter().zip(freq).enumerate() {
        writeln!(w, "{x},{l},{f}")?;
    }
    Ok(())
}

pub fn write_snapshots_csv<W: Write>(mut w: W, snapshots: &[BudgetSnapshot]) -> io::Result<()> {
    writeln!(w, "budget,replications,set_size,members")?;
    for s in snapshots {
        let members: Vec<String> = s.estimate.members().iter().map(|m| m.to_string()).collect();
        writeln!(w, "{},{},{},{}", s.budget, s.replications, s.estimate.len(), members.join(" "))?;
    }
    Ok(())
}

/// Writes the trace, final set, histogram, snapshots and checkpoint of a run.
pub fn write_run_dir(dir: &Path, result: &RunResult) -> Result<(), ProcedureError> {
    fs::create_dir_all(dir)?;
    let mut w = create(dir, "trace.csv")?;
    write_trace_csv(&mut w, &result.trace)?;
    w.flush()?;
    let mut w = create(dir, "risk_set.json")?;
    serde_json::to_writer_pretty(&mut w, &result.estimate.to_json()).map_err(io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    let mut w = create(dir, "risk_set.csv")?;
    result.estimate.write_csv(&mut w, &result.labels)?;
    w.flush()?;
    let mut w = create(dir, "frequencies.csv")?;
    write_frequencies_csv(&mut w, &result.labels, &result.frequencies)?;
    w.flush()?;
    let mut w = create(dir, "snapshots.csv")?;
    write_snapshots_csv(&mut w, &result.snapshots)?;
    w.flush()?;
    let summary = serde_json::json!({
        "variant": result.variant,
        "seed": result.seed,
        "xhat": result.xhat,
        "xhat_label": result.labels[result.xhat],
        "iterations": result.iterations,
        "total_replications": result.total_replications,
    });
    let mut w = create(dir, "summary.json")?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    if let Some(cp) = result.checkpoint() {
        cp.save(&dir.join("checkpoint.srsi"))?;
    }
    Ok(())
}
