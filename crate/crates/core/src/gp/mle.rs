//! Maximum-likelihood hyperparameters from the initial design.
//!
//! `beta0` is profiled out in closed form; the remaining parameters are
//! searched on a log scale by coordinate moves with a halving step, from a
//! few random starting points.

use super::{GpError, ObservationRow, SimulationLog, NOISE_FLOOR};
use crate::exec::{map_indexed, Execution};
use crate::kernels::{cholesky_with_jitter, KernelContext, KernelParams, PairIndex};
use crate::stats::{substream, StreamTag};
use nalgebra::{Cholesky, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const LENGTH_SCALE_BOUNDS: (f64, f64) = (1e-4, 1e4);
/// `tau^2` bounds as multiples of the sample variance of the design means.
pub const TAU_SQ_BOUNDS: (f64, f64) = (1e-6, 1e3);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub restarts: usize,
    pub seed: u64,
    /// One length-scale per solution dimension instead of a shared one.
    pub per_dimension_lambda: bool,
    /// Sweep improvement below which the step is halved.
    pub tolerance: f64,
    pub min_step: f64,
    pub max_evaluations: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            seed: 0,
            per_dimension_lambda: false,
            tolerance: 1e-8,
            min_step: 1e-6,
            max_evaluations: 4000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub beta0: f64,
    pub params: KernelParams,
    pub log_likelihood: f64,
    pub evaluations: usize,
}

/// `1^T A^{-1} y / 1^T A^{-1} 1` given the factor of `A`.
pub fn beta0_hat(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>) -> f64 {
    let ones = DVector::from_element(y.len(), 1.0);
    let a_inv_one = chol.solve(&ones);
    a_inv_one.dot(y) / a_inv_one.sum()
}

/// Log-likelihood at fixed `beta0`, up to the constant.
pub fn log_likelihood(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>, beta0: f64) -> f64 {
    let resid = y.map(|v| v - beta0);
    let quad = resid.dot(&chol.solve(&resid));
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * log_det - 0.5 * quad
}

fn factor(
    ctx: &KernelContext,
    rows: &[ObservationRow],
    params: &KernelParams,
) -> Result<Cholesky<f64, Dyn>, GpError> {
    let km = ctx.evaluate(params)?;
    let obs: Vec<PairIndex> = rows.iter().map(|r| r.pair).collect();
    let mut a = km.gram(&obs, Execution::Sequential);
    let floor = NOISE_FLOOR * params.tau_sq;
    for (i, r) in rows.iter().enumerate() {
        a[(i, i)] += r.noise_var.max(floor);
    }
    Ok(cholesky_with_jitter(a, params.tau_sq)?.0)
}

/// Profile log-likelihood and the matching `beta0`.
pub fn profile_log_likelihood(
    ctx: &KernelContext,
    rows: &[ObservationRow],
    params: &KernelParams,
) -> Result<(f64, f64), GpError> {
    let chol = factor(ctx, rows, params)?;
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.mean));
    let beta0 = beta0_hat(&chol, &y);
    Ok((log_likelihood(&chol, &y, beta0), beta0))
}

struct Layout {
    lambdas: usize,
    sources: usize,
}

impl Layout {
    fn unpack(&self, z: &[f64]) -> KernelParams {
        KernelParams {
            tau_sq: z[0].exp(),
            lambda: z[1..1 + self.lambdas].iter().map(|v| v.exp()).collect(),
            vartheta: z[1 + self.lambdas..1 + self.lambdas + self.sources]
                .iter()
                .map(|v| v.exp())
                .collect(),
        }
    }
}

/// Maximizes `f` over the box by coordinate moves of size `step`, halving
/// the step whenever a full sweep gains less than `tolerance`.
fn coordinate_search<F: Fn(&[f64]) -> f64>(
    f: F,
    start: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    options: &MleOptions,
) -> (Vec<f64>, f64, usize) {
    let mut x = start;
    let mut fx = f(&x);
    let mut evals = 1;
    let mut step = 1.0;
    while step >= options.min_step && evals < options.max_evaluations {
        let before = fx;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let cand = (x[i] + dir * step).clamp(lo[i], hi[i]);
                if cand == x[i] {
                    continue;
                }
                let mut trial = x.clone();
                trial[i] = cand;
                let ft = f(&trial);
                evals += 1;
                if ft > fx {
                    x = trial;
                    fx = ft;
                    break;
                }
            }
        }
        if !(fx - before >= options.tolerance) {
            step *= 0.5;
        }
    }
    (x, fx, evals)
}

fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

/// Fits `(beta0, tau^2, lambda, vartheta)` to the logged design.
pub fn fit_mle(
    ctx: &KernelContext,
    log: &SimulationLog,
    options: &MleOptions,
    exec: Execution,
) -> Result<MleFit, GpError> {
    if log.len() < 2 {
        return Err(GpError::NoData);
    }
    let rows = log.rows(0.0);
    let means: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let var = match sample_variance(&means) {
        v if v > 0.0 => v,
        _ => 1.0,
    };
    let dim = ctx.solution_dim();
    let layout = Layout {
        lambdas: if options.per_dimension_lambda { dim } else { 1 },
        sources: ctx.table.sources(),
    };
    let width = 1 + layout.lambdas + layout.sources;
    let (ls_lo, ls_hi) = (LENGTH_SCALE_BOUNDS.0.ln(), LENGTH_SCALE_BOUNDS.1.ln());
    let mut lo = vec![ls_lo; width];
    let mut hi = vec![ls_hi; width];
    lo[0] = (TAU_SQ_BOUNDS.0 * var).ln();
    hi[0] = (TAU_SQ_BOUNDS.1 * var).ln();

    // deterministic first start: tau^2 at the data variance, length-scales
    // at the squared coordinate ranges and the mean table entry
    let mut center = vec![var.ln(); width];
    for k in 0..layout.lambdas {
        let coords = ctx.solutions.iter().map(|s| if layout.lambdas == 1 { s.clone() } else { vec![s[k]] });
        let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in coords {
            for v in c {
                mn = mn.min(v);
                mx = mx.max(v);
            }
        }
        center[1 + k] = ((mx - mn).powi(2).max(1.0)).ln();
    }
    let nb = ctx.num_models();
    for l in 0..layout.sources {
        let mut sum = 0.0;
        for i in 0..nb {
            for j in 0..nb {
                sum += ctx.table.get(l, i, j);
            }
        }
        let mean = if nb > 1 { sum / (nb * (nb - 1)) as f64 } else { 1.0 };
        center[1 + layout.lambdas + l] = mean.max(LENGTH_SCALE_BOUNDS.0).ln();
    }
    for i in 0..width {
        center[i] = center[i].clamp(lo[i], hi[i]);
    }

    let starts: Vec<Vec<f64>> = (0..options.restarts.max(1))
        .map(|k| {
            if k == 0 {
                center.clone()
            } else {
                let mut rng = substream(options.seed, StreamTag::Likelihood, k as u64, 0);
                (0..width).map(|i| rng.random_range(lo[i]..=hi[i])).collect()
            }
        })
        .collect();

    let objective = |z: &[f64]| -> f64 {
        match profile_log_likelihood(ctx, &rows, &layout.unpack(z)) {
            Ok((ll, _)) if ll.is_finite() => ll,
            _ => f64::NEG_INFINITY,
        }
    };
    let results = map_indexed(exec, starts.len(), |k| {
        coordinate_search(objective, starts[k].clone(), &lo, &hi, options)
    });
    let evaluations = results.iter().map(|r| r.2).sum();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for (z, fz, _) in results {
        if fz.is_finite() && best.as_ref().is_none_or(|(_, fb)| fz > *fb) {
            best = Some((z, fz));
        }
    }
    let (z, ll) = best.ok_or_else(|| GpError::Optimizer("non-finite likelihood at every start".into()))?;
    let params = layout.unpack(&z);
    let (_, beta0) = profile_log_likelihood(ctx, &rows, &params)?;
    Ok(MleFit {
        beta0,
        params,
        log_likelihood: ll,
        evaluations,
    })
}
