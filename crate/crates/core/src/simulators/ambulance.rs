//! Single dispatching center on a square grid of neighborhoods.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Gamma};
use serde::{Deserialize, Serialize};

use super::{SimulationError, SimulationProblem};
use crate::input_model::{JointInputModel, ObservationSet, ProbabilitySimplex};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmbulanceConfig {
    pub grid_side: usize,
    pub ambulances: usize,
    pub calls_per_hour: f64,
    /// Mean of one Erlang phase of travel time.
    pub erlang_scale_minutes: f64,
    pub warmup_hours: f64,
    pub window_hours: f64,
}

impl Default for AmbulanceConfig {
    fn default() -> Self {
        Self {
            grid_side: 6,
            ambulances: 8,
            calls_per_hour: 1.0,
            erlang_scale_minutes: 7.2,
            warmup_hours: 1000.0,
            window_hours: 50.0,
        }
    }
}

impl AmbulanceConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::InvalidConfig(m.into()));
        if self.grid_side < 1 || self.ambulances < 1 {
            return bad("grid_side and ambulances must be at least 1");
        }
        if !(self.calls_per_hour > 0.0 && self.erlang_scale_minutes > 0.0) {
            return bad("calls_per_hour and erlang_scale_minutes must be positive");
        }
        if !(self.warmup_hours >= 0.0 && self.window_hours > 0.0) {
            return bad("warmup_hours must be nonnegative and window_hours positive");
        }
        Ok(())
    }

    pub fn neighborhoods(&self) -> usize {
        self.grid_side * self.grid_side
    }

    /// Row and column of a zero-based neighborhood index (row-major).
    pub fn cell(&self, n: usize) -> (usize, usize) {
        (n / self.grid_side, n % self.grid_side)
    }

    pub fn manhattan(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.cell(a);
        let (rb, cb) = self.cell(b);
        ra.abs_diff(rb) + ca.abs_diff(cb)
    }
}

/// Summary of one replication plus the bookkeeping checks.
#[derive(Clone, Debug, PartialEq)]
pub struct AmbulanceRun {
    pub mean_response_minutes: f64,
    pub pickups_in_window: usize,
    pub dispatches: usize,
    /// Largest number of simultaneously busy ambulances seen at a dispatch.
    pub max_busy: usize,
    /// Every dispatch found busy + idle equal to the fleet size and used an
    /// ambulance that was actually idle.
    pub conserved: bool,
    /// Calls were dispatched in arrival order with nondecreasing dispatch times.
    pub fcfs: bool,
}

/// Simulates one replication. `locations[i]` is the zero-based neighborhood
/// of support point `i` of `simplex`.
pub fn ambulance_run<R: Rng + ?Sized>(
    center: usize,
    locations: &[usize],
    simplex: &ProbabilitySimplex,
    config: &AmbulanceConfig,
    rng: &mut R,
) -> Result<AmbulanceRun, SimulationError> {
    config.validate()?;
    let cells = config.neighborhoods();
    if center >= cells || locations.iter().any(|&l| l >= cells) {
        return Err(SimulationError::InvalidParameters(format!(
            "neighborhoods must lie in 0..{cells}"
        )));
    }
    if locations.len() != simplex.len() {
        return Err(SimulationError::InvalidParameters(format!(
            "{} locations for a simplex of length {}",
            locations.len(),
            simplex.len()
        )));
    }
    let pick = WeightedIndex::new(simplex.weights().iter().copied())
        .map_err(|e| SimulationError::InvalidParameters(e.to_string()))?;
    let interarrival = Exp::new(config.calls_per_hour).expect("positive rate");
    let phase_hours = config.erlang_scale_minutes / 60.0;
    // one Gamma law per possible distance
    let max_distance = 2 * (config.grid_side - 1);
    let travel: Vec<Gamma<f64>> = (0..=max_distance)
        .map(|d| Gamma::new(d as f64 + 1.0, phase_hours).expect("positive shape"))
        .collect();

    let start = config.warmup_hours;
    let end = config.warmup_hours + config.window_hours;
    let mut free_at = vec![0.0f64; config.ambulances];
    let mut now = 0.0;
    let mut last_dispatch = 0.0;
    let (mut sum, mut count) = (0.0, 0usize);
    let mut first_after: Option<f64> = None;
    let mut run = AmbulanceRun {
        mean_response_minutes: 0.0,
        pickups_in_window: 0,
        dispatches: 0,
        max_busy: 0,
        conserved: true,
        fcfs: true,
    };
    loop {
        now += interarrival.sample(rng);
        if now > end && (count > 0 || first_after.is_some()) {
            break;
        }
        let location = locations[pick.sample(rng)];
        let (unit, &earliest) = free_at
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least one ambulance");
        let dispatch = now.max(earliest);
        let busy = free_at.iter().filter(|&&f| f > dispatch).count();
        let idle = config.ambulances - busy;
        run.conserved &= busy + idle == config.ambulances && free_at[unit] <= dispatch && busy < config.ambulances;
        run.fcfs &= dispatch >= last_dispatch;
        run.max_busy = run.max_busy.max(busy + 1);
        run.dispatches += 1;
        last_dispatch = dispatch;

        let d = config.manhattan(center, location);
        let pickup = dispatch + travel[d].sample(rng);
        free_at[unit] = pickup + travel[d].sample(rng);
        let response = (pickup - now) * 60.0;
        if (start..=end).contains(&pickup) {
            sum += response;
            count += 1;
        } else if pickup > end && first_after.is_none() {
            first_after = Some(response);
        }
    }
    run.pickups_in_window = count;
    run.mean_response_minutes = if count > 0 {
        sum / count as f64
    } else {
        first_after.expect("loop only exits with a measurement")
    };
    Ok(run)
}

/// Average response time in minutes over pickups in the measurement window.
pub fn ambulance_replicate<R: Rng + ?Sized>(
    center: usize,
    locations: &[usize],
    simplex: &ProbabilitySimplex,
    config: &AmbulanceConfig,
    rng: &mut R,
) -> Result<f64, SimulationError> {
    ambulance_run(center, locations, simplex, config, rng).map(|r| r.mean_response_minutes)
}

/// Total calls in the default synthetic frequency map.
pub const SYNTHETIC_CALLS: usize = 331;
/// Fixed counts `(neighborhood, calls)`, neighborhoods numbered from 1.
pub const SYNTHETIC_ANCHORS: [(usize, usize); 4] = [(30, 40), (6, 1), (11, 1), (15, 1)];
/// Neighborhood the remaining calls concentrate around, and the decay length.
pub const SYNTHETIC_HOTSPOT: usize = 23;
pub const SYNTHETIC_DECAY: f64 = 2.0;

/// Synthetic call counts for a 6x6 grid, indexed by neighborhood - 1.
///
/// Anchored neighborhoods keep their counts. Every other neighborhood gets one
/// call, and the rest are split in proportion to
/// `exp(-manhattan(n, hotspot) / decay)` by largest remainder, ties going to
/// the lower neighborhood.
pub fn synthetic_frequency_map() -> Vec<usize> {
    let grid = AmbulanceConfig::default();
    let cells = grid.neighborhoods();
    let mut counts = vec![0usize; cells];
    for &(n, c) in &SYNTHETIC_ANCHORS {
        counts[n - 1] = c;
    }
    let free: Vec<usize> = (0..cells).filter(|&n| counts[n] == 0).collect();
    let anchored: usize = SYNTHETIC_ANCHORS.iter().map(|a| a.1).sum();
    let spread = SYNTHETIC_CALLS - anchored - free.len();
    let weights: Vec<f64> = free
        .iter()
        .map(|&n| (-(grid.manhattan(n, SYNTHETIC_HOTSPOT - 1) as f64) / SYNTHETIC_DECAY).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut remainders = Vec::with_capacity(free.len());
    let mut given = 0;
    for (i, (&n, w)) in free.iter().zip(&weights).enumerate() {
        let share = spread as f64 * w / total;
        let whole = share.floor() as usize;
        counts[n] = 1 + whole;
        given += whole;
        remainders.push((share - whole as f64, i));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(spread - given) {
        counts[free[i]] += 1;
    }
    counts
}

/// Parses a frequency map: either 36 bare counts (one per line, neighborhood
/// order) or `neighborhood,count` lines. Blank lines and `#` comments are
/// skipped.
pub fn parse_frequency_map(text: &str, cells: usize) -> Result<Vec<usize>, SimulationError> {
    let mut counts = vec![0usize; cells];
    let mut next = 0usize;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: String| SimulationError::InvalidData(format!("line {lineno}: {m}"));
        let (n, c) = match line.split_once(',') {
            Some((n, c)) => {
                let n: usize = n.trim().parse().map_err(|e| err(format!("bad neighborhood: {e}")))?;
                if n == 0 || n > cells {
                    return Err(err(format!("neighborhood {n} outside 1..={cells}")));
                }
                (n - 1, c.trim())
            }
            None => {
                if next >= cells {
                    return Err(err(format!("more than {cells} entries")));
                }
                (next, line)
            }
        };
        counts[n] = c.parse().map_err(|e| err(format!("bad count: {e}")))?;
        next = n + 1;
    }
    if counts.iter().sum::<usize>() == 0 {
        return Err(SimulationError::InvalidData("frequency map has no calls".into()));
    }
    Ok(counts)
}

/// Turns per-neighborhood counts into an observation set over the
/// neighborhoods that were observed (values are 1-based neighborhood numbers).
pub fn counts_to_observations(counts: &[usize]) -> Result<ObservationSet, SimulationError> {
    let (values, kept): (Vec<Vec<f64>>, Vec<usize>) = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(n, &c)| (vec![(n + 1) as f64], c))
        .unzip();
    ObservationSet::from_counts(0, values, kept).map_err(|e| SimulationError::InvalidData(e.to_string()))
}

pub struct AmbulanceProblem {
    pub config: AmbulanceConfig,
    data: Vec<ObservationSet>,
    locations: Vec<usize>,
}

impl AmbulanceProblem {
    /// `data` is a single source of neighborhood numbers (1-based).
    pub fn new(config: AmbulanceConfig, data: ObservationSet) -> Result<Self, SimulationError> {
        config.validate()?;
        let cells = config.neighborhoods();
        let mut locations = Vec::with_capacity(data.support_size());
        for v in &data.distinct_support {
            let n = v.first().copied().unwrap_or(f64::NAN);
            if v.len() != 1 || n.fract() != 0.0 || n < 1.0 || n > cells as f64 {
                return Err(SimulationError::InvalidData(format!(
                    "location {v:?} is not a neighborhood in 1..={cells}"
                )));
            }
            locations.push(n as usize - 1);
        }
        Ok(Self {
            config,
            data: vec![data],
            locations,
        })
    }

    /// Zero-based neighborhood of each support point.
    pub fn locations(&self) -> &[usize] {
        &self.locations
    }
}

impl SimulationProblem for AmbulanceProblem {
    fn num_solutions(&self) -> usize {
        self.config.neighborhoods()
    }

    fn solution_label(&self, x: usize) -> String {
        (x + 1).to_string()
    }

    fn solution_coordinates(&self, x: usize) -> Vec<f64> {
        let (r, c) = self.config.cell(x);
        vec![r as f64, c as f64]
    }

    fn data(&self) -> &[ObservationSet] {
        &self.data
    }

    fn replicate(&self, x: usize, model: &JointInputModel, rng: &mut ChaCha8Rng) -> Result<f64, SimulationError> {
        ambulance_replicate(x, &self.locations, &model.per_source[0], &self.config, rng)
    }
}
