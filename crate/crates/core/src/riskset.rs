//! Plug-in, oracle and naive risk-set estimators.

use crate::exec::{map_indexed, Execution};
use crate::gp::checkpoint::Checkpoint;
use crate::gp::GpState;
use crate::stats::norm_cdf;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

/// Read access to the posterior quantities a risk set depends on.
pub trait PosteriorView: Sync {
    fn num_solutions(&self) -> usize;
    fn num_models(&self) -> usize;
    fn mean(&self, solution: usize, model: usize) -> f64;
    /// Posterior sd of `eta(xhat, P_b) - eta(x, P_b)`.
    fn pairwise_sigma(&self, xhat: usize, x: usize, model: usize) -> f64;
}

impl PosteriorView for GpState {
    fn num_solutions(&self) -> usize {
        GpState::num_solutions(self)
    }
    fn num_models(&self) -> usize {
        GpState::num_models(self)
    }
    fn mean(&self, solution: usize, model: usize) -> f64 {
        self.mean_at(solution, model)
    }
    fn pairwise_sigma(&self, xhat: usize, x: usize, model: usize) -> f64 {
        GpState::pairwise_sigma(self, xhat, x, model)
    }
}

/// A checkpoint only stores covariances against its own `xhat`.
impl PosteriorView for Checkpoint {
    fn num_solutions(&self) -> usize {
        self.header.num_solutions
    }
    fn num_models(&self) -> usize {
        self.header.num_models
    }
    fn mean(&self, solution: usize, model: usize) -> f64 {
        self.mu[solution * self.header.num_models + model]
    }
    fn pairwise_sigma(&self, xhat: usize, x: usize, model: usize) -> f64 {
        assert_eq!(xhat, self.header.xhat, "checkpoint holds covariances for its own xhat only");
        if x == xhat {
            return 0.0;
        }
        let nb = self.header.num_models;
        let h = xhat * nb + model;
        let p = x * nb + model;
        (self.var[h] - 2.0 * self.cov_xhat[p] + self.var[p]).max(0.0).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskSetEstimate {
    pub alpha: f64,
    pub delta: f64,
    pub xhat: usize,
    pub prob: Vec<f64>,
    pub included: Vec<bool>,
}

impl RiskSetEstimate {
    /// Classifies every solution by `prob > alpha`; `xhat` is always out.
    pub fn from_probs(prob: Vec<f64>, xhat: usize, alpha: f64, delta: f64) -> Self {
        let included = prob
            .iter()
            .enumerate()
            .map(|(x, &p)| x != xhat && p > alpha)
            .collect();
        Self {
            alpha,
            delta,
            xhat,
            prob,
            included,
        }
    }

    pub fn members(&self) -> Vec<usize> {
        (0..self.included.len()).filter(|&x| self.included[x]).collect()
    }

    pub fn len(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, x: usize) -> bool {
        self.included[x]
    }

    pub fn is_superset_of(&self, other: &RiskSetEstimate) -> bool {
        self.included
            .iter()
            .zip(&other.included)
            .all(|(&a, &b)| a || !b)
    }

    /// Size of the symmetric difference.
    pub fn misclassified(&self, other: &RiskSetEstimate) -> usize {
        self.included
            .iter()
            .zip(&other.included)
            .filter(|(a, b)| a != b)
            .count()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let solutions: Vec<_> = self
            .prob
            .iter()
            .zip(&self.included)
            .enumerate()
            .map(|(x, (&p, &inc))| serde_json::json!({"solution": x, "prob": p, "included": inc}))
            .collect();
        serde_json::json!({
            "alpha": self.alpha,
            "delta": self.delta,
            "xhat": self.xhat,
            "solutions": solutions,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Option<Self> {
        let alpha = value.get("alpha")?.as_f64()?;
        let delta = value.get("delta")?.as_f64()?;
        let xhat = value.get("xhat")?.as_u64()? as usize;
        let rows = value.get("solutions")?.as_array()?;
        let mut prob = Vec::with_capacity(rows.len());
        let mut included = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.get("solution")?.as_u64()? as usize != i {
                return None;
            }
            prob.push(row.get("prob")?.as_f64()?);
            included.push(row.get("included")?.as_bool()?);
        }
        Some(Self {
            alpha,
            delta,
            xhat,
            prob,
            included,
        })
    }

    /// `solution,label,prob,included` rows. `labels` may be empty.
    pub fn write_csv<W: Write>(&self, mut w: W, labels: &[String]) -> io::Result<()> {
        writeln!(w, "solution,label,prob,included")?;
        for (x, (&p, &inc)) in self.prob.iter().zip(&self.included).enumerate() {
            let label = labels.get(x).map(String::as_str).unwrap_or("");
            writeln!(w, "{x},{label},{p},{}", inc as u8)?;
        }
        Ok(())
    }
}

/// Probability term for one model: `Phi(z / sigma)`, or the strict
/// indicator `z > 0` when the posterior is degenerate.
pub(crate) fn cdf_term(z: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        norm_cdf(z / sigma)
    } else if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Per-solution MC probability that `x` beats `xhat` by more than `delta`.
pub fn risk_probabilities<V: PosteriorView + ?Sized>(
    view: &V,
    xhat: usize,
    delta: f64,
    exec: Execution,
) -> Vec<f64> {
    let nb = view.num_models();
    map_indexed(exec, view.num_solutions(), |x| {
        if x == xhat {
            return 0.0;
        }
        let sum: f64 = (0..nb)
            .map(|b| {
                let z = view.mean(xhat, b) - view.mean(x, b) - delta;
                cdf_term(z, view.pairwise_sigma(xhat, x, b))
            })
            .sum();
        (sum / nb as f64).clamp(0.0, 1.0)
    })
}

pub fn estimate_risk_set<V: PosteriorView + ?Sized>(
    view: &V,
    xhat: usize,
    alpha: f64,
    delta: f64,
    exec: Execution,
) -> RiskSetEstimate {
    let prob = risk_probabilities(view, xhat, delta, exec);
    RiskSetEstimate::from_probs(prob, xhat, alpha, delta)
}

/// Indicator-form estimator over known conditional means.
pub fn oracle_risk_set<F: Fn(usize, usize) -> f64>(
    means: F,
    num_solutions: usize,
    num_models: usize,
    xhat: usize,
    alpha: f64,
    delta: f64,
) -> RiskSetEstimate {
    let prob = (0..num_solutions)
        .map(|x| {
            if x == xhat {
                return 0.0;
            }
            let hits = (0..num_models)
                .filter(|&b| means(xhat, b) - means(x, b) > delta)
                .count();
            hits as f64 / num_models as f64
        })
        .collect();
    RiskSetEstimate::from_probs(prob, xhat, alpha, delta)
}

/// Estimates for every `(delta, alpha)` combination; indexed `[delta][alpha]`.
pub fn reclassify<V: PosteriorView + ?Sized>(
    view: &V,
    xhat: usize,
    alphas: &[f64],
    deltas: &[f64],
    exec: Execution,
) -> Vec<Vec<RiskSetEstimate>> {
    deltas
        .iter()
        .map(|&delta| {
            let prob = risk_probabilities(view, xhat, delta, exec);
            alphas
                .iter()
                .map(|&alpha| RiskSetEstimate::from_probs(prob.clone(), xhat, alpha, delta))
                .collect()
        })
        .collect()
}

/// True when `alpha * B` is an integer within 1e-12.
pub fn alpha_is_multiple_of_inverse_b(alpha: f64, num_models: usize) -> bool {
    let scaled = alpha * num_models as f64;
    (scaled - scaled.round()).abs() < 1e-12
}

/// Empirical `level`-quantile: the smallest sample `q` with `F(q) >= level`.
pub fn empirical_quantile(values: &[f64], level: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // F(sorted[i]) >= (i + 1) / n; pick the first index meeting the level.
    let idx = sorted
        .iter()
        .enumerate()
        .position(|(i, _)| {
            let below = sorted.partition_point(|v| *v <= sorted[i]);
            below as f64 / n as f64 >= level
        })
        .unwrap_or(n - 1);
    sorted[idx]
}

/// Quantile form of membership: `q_{1-alpha}(differences) > delta`.
pub fn quantile_membership(differences: &[f64], alpha: f64, delta: f64) -> bool {
    empirical_quantile(differences, 1.0 - alpha) > delta
}

/// Posterior-mean differences `mu(xhat, b) - mu(x, b)` for every model.
pub fn mean_differences<V: PosteriorView + ?Sized>(view: &V, xhat: usize, x: usize) -> Vec<f64> {
    (0..view.num_models())
        .map(|b| view.mean(xhat, b) - view.mean(x, b))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins spanning the data range.
    pub fn new(values: &[f64], bins: usize) -> Self {
        assert!(bins >= 1 && !values.is_empty());
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let i = (((v - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self { edges, counts }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "lower,upper,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{},{}", self.edges[i], self.edges[i + 1], c)?;
        }
        Ok(())
    }
}
