//! Single-server queue with finite capacity and balking.

use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};

use super::{SimulationError, SimulationProblem};
use crate::input_model::{JointInputModel, ObservationSet};

/// Switch to the exact finite sums when the traffic intensity is this close to 1.
const NEAR_UNIT_RHO: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Mm1kConfig {
    pub min_capacity: u32,
    pub max_capacity: u32,
    /// Cost per unit of time in system.
    pub waiting_cost: f64,
    /// Revenue per admitted customer.
    pub revenue: f64,
    pub customers: usize,
    pub true_interarrival_mean: f64,
    pub true_service_mean: f64,
    /// Resample interarrival and service times from the support instead of
    /// using exponentials with the simplex means.
    pub resample: bool,
}

impl Default for Mm1kConfig {
    fn default() -> Self {
        Self {
            min_capacity: 1,
            max_capacity: 50,
            waiting_cost: 1.0,
            revenue: 200.0,
            customers: 2000,
            true_interarrival_mean: 1.0,
            true_service_mean: 1.1,
            resample: false,
        }
    }
}

impl Mm1kConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::InvalidConfig(m.into()));
        if self.min_capacity < 1 || self.max_capacity < self.min_capacity {
            return bad("capacities must satisfy 1 <= min_capacity <= max_capacity");
        }
        if !(self.waiting_cost > 0.0 && self.revenue > 0.0) {
            return bad("waiting_cost and revenue must be positive");
        }
        if self.customers == 0 {
            return bad("customers must be positive");
        }
        if !(self.true_interarrival_mean > 0.0 && self.true_service_mean > 0.0) {
            return bad("true means must be positive");
        }
        Ok(())
    }

    pub fn capacities(&self) -> Vec<u32> {
        (self.min_capacity..=self.max_capacity).collect()
    }
}

fn check_parameters(k: u32, theta1: f64, theta2: f64) -> Result<(), SimulationError> {
    if k < 1 || !(theta1 > 0.0 && theta1.is_finite()) || !(theta2 > 0.0 && theta2.is_finite()) {
        return Err(SimulationError::InvalidParameters(format!(
            "need k >= 1 and positive finite means, got k={k}, theta1={theta1}, theta2={theta2}"
        )));
    }
    Ok(())
}

/// Balking probability and mean time in system of admitted customers.
pub fn mm1k_balk_and_sojourn(k: u32, theta1: f64, theta2: f64) -> Result<(f64, f64), SimulationError> {
    check_parameters(k, theta1, theta2)?;
    let rho = theta2 / theta1;
    let kf = k as f64;
    let d = rho - 1.0;
    if d.abs() < 1e-12 {
        return Ok((1.0 / (kf + 1.0), theta2 * (kf + 1.0) / 2.0));
    }
    if d.abs() < NEAR_UNIT_RHO {
        // closed forms cancel catastrophically here
        let (mut z, mut l, mut term) = (0.0, 0.0, 1.0);
        for n in 0..=k {
            z += term;
            l += n as f64 * term;
            if n < k {
                term *= rho;
            }
        }
        let balk = term / z;
        return Ok((balk, (l / z) * theta1 / (1.0 - balk)));
    }
    let rk = rho.powi(k as i32);
    let balk = rk * (1.0 - rho) / (1.0 - rk * rho);
    let sojourn = theta2 * (1.0 - (kf + 1.0) * rk + kf * rk * rho) / ((1.0 - rho) * (1.0 - rk));
    Ok((balk, sojourn))
}

/// Expected net cost per customer, `c W - r (1 - P_balk)`.
pub fn mm1k_analytic_cost(k: u32, theta1: f64, theta2: f64, c: f64, r: f64) -> Result<f64, SimulationError> {
    let (balk, sojourn) = mm1k_balk_and_sojourn(k, theta1, theta2)?;
    Ok(c * sojourn - r * (1.0 - balk))
}

/// Stationary number-in-system pmf over `0..=k`.
pub fn mm1k_steady_state(k: u32, rho: f64) -> Vec<f64> {
    let mut pmf = Vec::with_capacity(k as usize + 1);
    let mut term = 1.0;
    for _ in 0..=k {
        pmf.push(term);
        term *= rho;
    }
    let total: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|p| *p /= total);
    pmf
}

pub fn sample_initial_count<R: Rng + ?Sized>(k: u32, rho: f64, rng: &mut R) -> u32 {
    let pmf = mm1k_steady_state(k, rho);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (n, p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return n as u32;
        }
    }
    k
}

enum TimeLaw<'a> {
    Exponential(Exp<f64>),
    Empirical(WeightedIndex<f64>, &'a [Vec<f64>]),
}

impl TimeLaw<'_> {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            TimeLaw::Exponential(e) => e.sample(rng),
            TimeLaw::Empirical(w, support) => support[w.sample(rng)][0],
        }
    }
}

/// Runs `customers` arrivals through a capacity-`k` queue started from its
/// stationary number in system. Returns the average cost per arriving
/// customer: `c` times the mean time in system of admitted customers, minus
/// `r` times the admitted fraction.
#[allow(clippy::too_many_arguments)]
fn simulate_queue<R: Rng + ?Sized>(
    k: u32,
    theta1: f64,
    theta2: f64,
    interarrival: &TimeLaw<'_>,
    service: &TimeLaw<'_>,
    customers: usize,
    c: f64,
    r: f64,
    rng: &mut R,
) -> f64 {
    let initial = sample_initial_count(k, theta2 / theta1, rng);
    let mut departures: VecDeque<f64> = VecDeque::with_capacity(k as usize);
    let mut last = 0.0;
    for _ in 0..initial {
        last += service.sample(rng);
        departures.push_back(last);
    }
    let mut now = 0.0;
    let mut admitted = 0usize;
    let mut total_sojourn = 0.0;
    for _ in 0..customers {
        now += interarrival.sample(rng);
        while departures.front().is_some_and(|&d| d <= now) {
            departures.pop_front();
        }
        if departures.len() >= k as usize {
            continue;
        }
        let start = departures.back().map_or(now, |&d| d.max(now));
        let done = start + service.sample(rng);
        departures.push_back(done);
        total_sojourn += done - now;
        admitted += 1;
    }
    let mean_sojourn = if admitted > 0 { total_sojourn / admitted as f64 } else { 0.0 };
    c * mean_sojourn - r * admitted as f64 / customers as f64
}

/// One replication with exponential times at the given means.
pub fn mm1k_replicate_exponential<R: Rng + ?Sized>(
    k: u32,
    theta1: f64,
    theta2: f64,
    customers: usize,
    c: f64,
    r: f64,
    rng: &mut R,
) -> Result<f64, SimulationError> {
    check_parameters(k, theta1, theta2)?;
    let a = TimeLaw::Exponential(Exp::new(1.0 / theta1).expect("positive rate"));
    let s = TimeLaw::Exponential(Exp::new(1.0 / theta2).expect("positive rate"));
    Ok(simulate_queue(k, theta1, theta2, &a, &s, customers, c, r, rng))
}

pub struct Mm1kProblem {
    pub config: Mm1kConfig,
    capacities: Vec<u32>,
    data: Vec<ObservationSet>,
}

impl Mm1kProblem {
    /// `data[0]` holds interarrival times, `data[1]` service times.
    pub fn new(config: Mm1kConfig, data: Vec<ObservationSet>) -> Result<Self, SimulationError> {
        config.validate()?;
        if data.len() != 2 || data.iter().any(|d| d.dimension() != 1) {
            return Err(SimulationError::InvalidData(
                "expected two scalar sources: interarrival and service times".into(),
            ));
        }
        if data.iter().any(|d| d.distinct_support.iter().any(|v| !(v[0] >= 0.0))) {
            return Err(SimulationError::InvalidData("times must be nonnegative".into()));
        }
        Ok(Self {
            capacities: config.capacities(),
            config,
            data,
        })
    }

    pub fn capacity(&self, x: usize) -> u32 {
        self.capacities[x]
    }

    /// Means of the interarrival and service distributions under `model`.
    pub fn means(&self, model: &JointInputModel) -> (f64, f64) {
        let m = |s: usize| model.per_source[s].weighted_mean(&self.data[s].distinct_support)[0];
        (m(0), m(1))
    }
}

impl SimulationProblem for Mm1kProblem {
    fn num_solutions(&self) -> usize {
        self.capacities.len()
    }

    fn solution_label(&self, x: usize) -> String {
        self.capacities[x].to_string()
    }

    fn solution_coordinates(&self, x: usize) -> Vec<f64> {
        vec![self.capacities[x] as f64]
    }

    fn data(&self) -> &[ObservationSet] {
        &self.data
    }

    fn replicate(&self, x: usize, model: &JointInputModel, rng: &mut ChaCha8Rng) -> Result<f64, SimulationError> {
        let k = self.capacities[x];
        let (theta1, theta2) = self.means(model);
        check_parameters(k, theta1, theta2)?;
        let cfg = &self.config;
        if !cfg.resample {
            return mm1k_replicate_exponential(k, theta1, theta2, cfg.customers, cfg.waiting_cost, cfg.revenue, rng);
        }
        let law = |s: usize| -> Result<TimeLaw<'_>, SimulationError> {
            let w = WeightedIndex::new(model.per_source[s].weights().iter().copied())
                .map_err(|e| SimulationError::InvalidParameters(e.to_string()))?;
            Ok(TimeLaw::Empirical(w, &self.data[s].distinct_support))
        };
        let (a, s) = (law(0)?, law(1)?);
        Ok(simulate_queue(k, theta1, theta2, &a, &s, cfg.customers, cfg.waiting_cost, cfg.revenue, rng))
    }

    fn conditional_mean(&self, x: usize, model: &JointInputModel) -> Option<f64> {
        let (theta1, theta2) = self.means(model);
        mm1k_analytic_cost(self.capacities[x], theta1, theta2, self.config.waiting_cost, self.config.revenue).ok()
    }
}
