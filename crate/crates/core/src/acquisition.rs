//! One-step-lookahead sampling decision.
//!
//! `expected_change` is the Taylor-linearised expected number of solutions
//! whose classification flips after a hypothetical update. The folded-normal
//! scores `score_h1`/`score_h2` pick one model per solution so that the
//! full criterion only has to be evaluated `|X|` times per iteration.

use crate::exec::{map_indexed, Execution};
use crate::gp::{rank1_factor, rank2_factor, GpError, GpState, LowRank};
use crate::kernels::PairIndex;
use crate::riskset::{cdf_term, RiskSetEstimate};
use crate::stats::{folded_normal_mean, log_norm_cdf, log_sum_exp, norm_pdf};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;
use std::io::{self, Write};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Single,
    Pairwise,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Pairwise => "pairwise",
        }
    }
}

/// How the model paired with a non-`xhat` solution is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelRule {
    /// Folded-normal expected local change.
    #[default]
    FoldedNormal,
    /// `-|delta - mean gap| / sigma_t`.
    Margin,
    /// `sigma_t`.
    Variance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionScore {
    pub solution: usize,
    pub p1: usize,
    pub h1: f64,
    pub p2: Option<usize>,
    pub h2: Option<f64>,
    pub single: f64,
    pub pairwise: Option<f64>,
    /// `-max(single, pairwise / 2)`.
    pub h_tilde: f64,
    /// `single` and `pairwise` on a log scale, which stays ordered where
    /// they underflow.
    pub log_single: LogCriterion,
    pub log_pairwise: Option<LogCriterion>,
    /// `max(single, pairwise / 2)` on the same scale.
    pub log_criterion: LogCriterion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionDecision {
    pub mode: Mode,
    pub solution: usize,
    pub model: usize,
    pub criterion_value: f64,
    pub table: Vec<SolutionScore>,
}

impl AcquisitionDecision {
    /// Pairs to simulate, `xhat` first in pairwise mode.
    pub fn pairs(&self, xhat: usize) -> Vec<PairIndex> {
        match self.mode {
            Mode::Single => vec![PairIndex::new(self.solution, self.model)],
            Mode::Pairwise => vec![
                PairIndex::new(xhat, self.model),
                PairIndex::new(self.solution, self.model),
            ],
        }
    }
}

/// Expected change on a log scale. Where even the log underflows
/// (`log == -inf`), `tail` orders candidates by the leading exponent of the
/// dominant term, `ln Phi(-r) ~ -r^2 / 2`, recorded as `-ln r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogCriterion {
    pub log: f64,
    pub tail: f64,
}

impl LogCriterion {
    pub const ZERO: LogCriterion = LogCriterion {
        log: f64::NEG_INFINITY,
        tail: f64::NEG_INFINITY,
    };

    pub fn value(self) -> f64 {
        self.log.exp()
    }

    /// Strictly larger; NaN never compares larger.
    pub fn beats(self, other: LogCriterion) -> bool {
        if self.log == f64::NEG_INFINITY && other.log == f64::NEG_INFINITY {
            self.tail > other.tail
        } else {
            self.log > other.log
        }
    }

    fn halved(self) -> LogCriterion {
        LogCriterion {
            log: self.log - LN_2,
            tail: self.tail,
        }
    }

    fn max(self, other: LogCriterion) -> LogCriterion {
        if other.beats(self) {
            other
        } else {
            self
        }
    }
}

/// Log-probability that a solution switches sides given the linearised
/// predictive law `N(a, scale^2)` of its risk probability, with its tail key.
fn log_switch_probability(inside: bool, a: f64, alpha: f64, ln_scale: f64) -> (f64, f64) {
    let num = if inside { alpha - a } else { a - alpha };
    if num == 0.0 {
        return (0.5f64.ln(), f64::INFINITY);
    }
    if ln_scale == f64::NEG_INFINITY {
        return if num > 0.0 {
            (0.0, f64::INFINITY)
        } else {
            (f64::NEG_INFINITY, f64::NEG_INFINITY)
        };
    }
    let ln_ratio = num.abs().ln() - ln_scale;
    let tail = if num > 0.0 { f64::INFINITY } else { -ln_ratio };
    (log_norm_cdf(ln_ratio.exp().copysign(num)), tail)
}

fn pair_var(v: &DMatrix<f64>, p: usize, q: usize) -> f64 {
    (v[(p, p)] - 2.0 * v[(p, q)] + v[(q, q)]).max(0.0)
}

/// [`expected_change`] on a log scale. Far from the threshold the switch
/// probabilities underflow, so candidates are compared on this scale.
pub fn log_expected_change(state: &GpState, xhat: usize, update: &LowRank, current: &RiskSetEstimate) -> LogCriterion {
    let (v, mu) = (state.v(), state.mu());
    let nb = state.num_models();
    let k = update.factors.len();
    let (alpha, delta) = (current.alpha, current.delta);
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut terms = Vec::with_capacity(state.num_solutions());
    let mut tail = f64::NEG_INFINITY;
    let mut weights = Vec::with_capacity(nb);
    let mut grad = vec![0.0; k];
    for x in 0..state.num_solutions() {
        if x == xhat {
            continue;
        }
        weights.clear();
        let mut a = 0.0;
        for b in 0..nb {
            let (p, q) = (xhat * nb + b, x * nb + b);
            let sn = (pair_var(v, p, q) - update.contrast_sq(p, q)).max(0.0).sqrt();
            let z = mu[p] - mu[q] - delta;
            a += cdf_term(z, sn);
            if sn > 0.0 {
                // ln of phi(z / sn) / (B sn)
                let lc = -0.5 * (z / sn).powi(2) - half_ln_2pi - (nb as f64 * sn).ln();
                weights.push((lc, p, q));
            }
        }
        a /= nb as f64;
        // gradient of `a` along the update directions, scaled by exp(-top)
        let top = weights.iter().map(|w| w.0).fold(f64::NEG_INFINITY, f64::max);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for &(lc, p, q) in &weights {
            let c = (lc - top).exp();
            for (g, u) in grad.iter_mut().zip(&update.factors) {
                *g += c * (u[p] - u[q]);
            }
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let ln_scale = if norm > 0.0 && top > f64::NEG_INFINITY {
            top + norm.ln()
        } else {
            f64::NEG_INFINITY
        };
        let (log, t) = log_switch_probability(current.included[x], a, alpha, ln_scale);
        terms.push(log);
        tail = tail.max(t);
    }
    LogCriterion {
        log: log_sum_exp(&terms),
        tail,
    }
}

/// Expected classification changes under the update `update`, summed over
/// every solution except `xhat`.
pub fn expected_change(state: &GpState, xhat: usize, update: &LowRank, current: &RiskSetEstimate) -> f64 {
    log_expected_change(state, xhat, update, current).value()
}

/// Single sampling of `pair` with `reps` replications.
pub fn expected_change_single(
    state: &GpState,
    xhat: usize,
    pair: PairIndex,
    noise: &[f64],
    reps: usize,
    current: &RiskSetEstimate,
) -> Result<f64, GpError> {
    log_expected_change_single(state, xhat, pair, noise, reps, current).map(LogCriterion::value)
}

pub fn log_expected_change_single(
    state: &GpState,
    xhat: usize,
    pair: PairIndex,
    noise: &[f64],
    reps: usize,
    current: &RiskSetEstimate,
) -> Result<LogCriterion, GpError> {
    let update = state.rank1_predict(pair, noise[state.flat(pair.solution, pair.model)], reps)?;
    Ok(log_expected_change(state, xhat, &update, current))
}

/// Pairwise sampling of `(xhat, P_b)` and `(x, P_b)`.
pub fn expected_change_pairwise(
    state: &GpState,
    xhat: usize,
    x: usize,
    b: usize,
    noise: &[f64],
    reps: usize,
    current: &RiskSetEstimate,
) -> Result<f64, GpError> {
    log_expected_change_pairwise(state, xhat, x, b, noise, reps, current).map(LogCriterion::value)
}

#[allow(clippy::too_many_arguments)]
pub fn log_expected_change_pairwise(
    state: &GpState,
    xhat: usize,
    x: usize,
    b: usize,
    noise: &[f64],
    reps: usize,
    current: &RiskSetEstimate,
) -> Result<LogCriterion, GpError> {
    let (ph, px) = (PairIndex::new(xhat, b), PairIndex::new(x, b));
    let update = state.rank2_predict(ph, px, noise[state.flat(xhat, b)], noise[state.flat(x, b)], reps)?;
    Ok(log_expected_change(state, xhat, &update, current))
}

/// `argmax_b V(xhat b, xhat b)`, lowest index on ties.
pub fn select_model_for_xhat(state: &GpState, xhat: usize) -> usize {
    let v = state.v();
    argmax((0..state.num_models()).map(|b| {
        let p = state.flat(xhat, b);
        v[(p, p)]
    }))
}

/// First index of the largest value; NaN never wins.
pub fn argmax<I: IntoIterator<Item = f64>>(values: I) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, val) in values.into_iter().enumerate() {
        if val > best_val {
            best = i;
            best_val = val;
        }
    }
    best
}

/// The 2x2 block of `V` over `(xhat, b)` and `(x, b)`.
fn block(state: &GpState, xhat: usize, x: usize, b: usize) -> DMatrix<f64> {
    let v = state.v();
    let (p, q) = (state.flat(xhat, b), state.flat(x, b));
    DMatrix::from_row_slice(2, 2, &[v[(p, p)], v[(p, q)], v[(q, p)], v[(q, q)]])
}

/// Folded-normal expected local change for one model. `contrast` is the drop
/// in the variance of `eta(xhat, P_b) - eta(x, P_b)` under the update.
fn folded_score(gap: f64, sigma_now: f64, contrast: f64, nb: usize) -> f64 {
    let sigma_next = (sigma_now * sigma_now - contrast).max(0.0).sqrt();
    let a1 = cdf_term(gap, sigma_next) - cdf_term(gap, sigma_now);
    let a2 = if sigma_next > 0.0 {
        norm_pdf(gap / sigma_next) * contrast.max(0.0).sqrt() / sigma_next
    } else {
        0.0
    };
    folded_normal_mean(a1, a2) / nb as f64
}

/// Single-sampling score of `(x, P_b)`.
pub fn score_h1(
    state: &GpState,
    xhat: usize,
    x: usize,
    b: usize,
    noise: &[f64],
    reps: usize,
    delta: f64,
) -> f64 {
    let blk = block(state, xhat, x, b);
    let s = noise[state.flat(x, b)] / reps as f64;
    let contrast = rank1_factor(&blk, 1, s).map_or(0.0, |u| u.contrast_sq(0, 1));
    let gap = state.mean_at(xhat, b) - state.mean_at(x, b) - delta;
    folded_score(gap, state.pairwise_sigma(xhat, x, b), contrast, state.num_models())
}

/// Pairwise-sampling score of `{(xhat, P_b), (x, P_b)}`.
pub fn score_h2(
    state: &GpState,
    xhat: usize,
    x: usize,
    b: usize,
    noise: &[f64],
    reps: usize,
    delta: f64,
) -> f64 {
    let blk = block(state, xhat, x, b);
    let r = reps as f64;
    let (s1, s2) = (noise[state.flat(xhat, b)] / r, noise[state.flat(x, b)] / r);
    let contrast = rank2_factor(&blk, 0, 1, s1, s2).map_or(0.0, |u| u.contrast_sq(0, 1));
    let gap = state.mean_at(xhat, b) - state.mean_at(x, b) - delta;
    folded_score(gap, state.pairwise_sigma(xhat, x, b), contrast, state.num_models())
}

fn margin_score(state: &GpState, xhat: usize, x: usize, b: usize, delta: f64) -> f64 {
    let num = (delta - (state.mean_at(xhat, b) - state.mean_at(x, b))).abs();
    let sigma = state.pairwise_sigma(xhat, x, b);
    if sigma > 0.0 {
        -num / sigma
    } else if num == 0.0 {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// `(P1, H1(P1), P2, H2(P2))` for a solution `x != xhat`.
pub fn select_model_for_x(
    state: &GpState,
    xhat: usize,
    x: usize,
    noise: &[f64],
    reps: usize,
    rule: ModelRule,
    delta: f64,
) -> (usize, f64, usize, f64) {
    let nb = state.num_models();
    match rule {
        ModelRule::FoldedNormal => {
            let h1: Vec<f64> = (0..nb).map(|b| score_h1(state, xhat, x, b, noise, reps, delta)).collect();
            let h2: Vec<f64> = (0..nb).map(|b| score_h2(state, xhat, x, b, noise, reps, delta)).collect();
            let (p1, p2) = (argmax(h1.iter().copied()), argmax(h2.iter().copied()));
            (p1, h1[p1], p2, h2[p2])
        }
        ModelRule::Margin | ModelRule::Variance => {
            let scores: Vec<f64> = (0..nb)
                .map(|b| match rule {
                    ModelRule::Margin => margin_score(state, xhat, x, b, delta),
                    _ => state.pairwise_sigma(xhat, x, b),
                })
                .collect();
            let p = argmax(scores.iter().copied());
            (p, scores[p], p, scores[p])
        }
    }
}

/// Chooses the next pair (or pair of pairs) to simulate.
pub fn decide(
    state: &GpState,
    xhat: usize,
    reps: usize,
    current: &RiskSetEstimate,
    rule: ModelRule,
    exec: Execution,
) -> Result<AcquisitionDecision, GpError> {
    let noise = state.noise_table()?;
    let delta = current.delta;
    let scored: Vec<Result<SolutionScore, GpError>> = map_indexed(exec, state.num_solutions(), |x| {
        if x == xhat {
            let p1 = select_model_for_xhat(state, xhat);
            let p = state.flat(xhat, p1);
            let ls = log_expected_change_single(state, xhat, PairIndex::new(xhat, p1), &noise, reps, current)?;
            return Ok(SolutionScore {
                solution: x,
                p1,
                h1: state.v()[(p, p)],
                p2: None,
                h2: None,
                single: ls.value(),
                pairwise: None,
                h_tilde: -ls.value(),
                log_single: ls,
                log_pairwise: None,
                log_criterion: ls,
            });
        }
        let (p1, h1, p2, h2) = select_model_for_x(state, xhat, x, &noise, reps, rule, delta);
        let ls = log_expected_change_single(state, xhat, PairIndex::new(x, p1), &noise, reps, current)?;
        let lp = match log_expected_change_pairwise(state, xhat, x, p2, &noise, reps, current) {
            Ok(v) => v,
            Err(GpError::Degenerate(pair)) => {
                log::debug!("pairwise update degenerate at {pair:?}");
                LogCriterion::ZERO
            }
            Err(e) => return Err(e),
        };
        let (single, pairwise) = (ls.value(), lp.value());
        Ok(SolutionScore {
            solution: x,
            p1,
            h1,
            p2: Some(p2),
            h2: Some(h2),
            single,
            pairwise: Some(pairwise),
            h_tilde: -single.max(0.5 * pairwise),
            log_single: ls,
            log_pairwise: Some(lp),
            log_criterion: ls.max(lp.halved()),
        })
    });
    let table = scored.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut best = 0;
    for (x, row) in table.iter().enumerate() {
        if row.log_criterion.beats(table[best].log_criterion) {
            best = x;
        }
    }
    let s = &table[best];
    let (mode, model) = match (s.log_pairwise, s.p2) {
        (Some(lp), Some(p2)) if lp.halved().beats(s.log_single) => (Mode::Pairwise, p2),
        _ => (Mode::Single, s.p1),
    };
    Ok(AcquisitionDecision {
        mode,
        solution: best,
        model,
        criterion_value: -s.h_tilde,
        table,
    })
}

/// One row of the per-iteration trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: u64,
    pub solution: usize,
    pub model: usize,
    pub mode: Mode,
    pub criterion: f64,
    pub set_size: usize,
    pub replications: u64,
}

pub fn write_trace_csv<W: Write>(mut w: W, rows: &[TraceRecord]) -> io::Result<()> {
    writeln!(w, "t,solution,model,mode,criterion,set_size,replications")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.iteration,
            r.solution,
            r.model,
            r.mode.as_str(),
            r.criterion,
            r.set_size,
            r.replications
        )?;
    }
    Ok(())
}
