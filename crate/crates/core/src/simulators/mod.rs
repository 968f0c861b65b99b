//! Stochastic test problems and the replication driver.

pub mod ambulance;
pub mod mm1k;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use thiserror::Error;

pub use ambulance::{
    ambulance_replicate, ambulance_run, synthetic_frequency_map, AmbulanceConfig, AmbulanceProblem,
    AmbulanceRun,
};
pub use mm1k::{mm1k_analytic_cost, mm1k_replicate_exponential, Mm1kConfig, Mm1kProblem};

use crate::exec::{map_indexed, Execution};
use crate::input_model::{JointInputModel, ObservationSet};
use crate::stats::{substream, StreamTag};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("invalid problem configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid simulation parameters: {0}")]
    InvalidParameters(String),
    #[error("invalid input data: {0}")]
    InvalidData(String),
}

/// A simulation model whose inputs are one discrete distribution per source.
pub trait SimulationProblem: Sync {
    fn num_solutions(&self) -> usize;

    fn solution_label(&self, x: usize) -> String;

    /// Coordinates used by the solution kernel.
    fn solution_coordinates(&self, x: usize) -> Vec<f64>;

    /// Real-world observations, one set per input source.
    fn data(&self) -> &[ObservationSet];

    /// One replication of solution `x` under the input model.
    fn replicate(&self, x: usize, model: &JointInputModel, rng: &mut ChaCha8Rng) -> Result<f64, SimulationError>;

    /// Exact conditional mean, when the problem has one.
    fn conditional_mean(&self, _x: usize, _model: &JointInputModel) -> Option<f64> {
        None
    }
}

/// Runs replications `first..first + count` of solution `x`. Replication `j`
/// draws from the stream `(seed, tag, key, j)`, so results do not depend on
/// how the batch is split or scheduled.
#[allow(clippy::too_many_arguments)]
pub fn replicate_batch<P: SimulationProblem + ?Sized>(
    problem: &P,
    x: usize,
    model: &JointInputModel,
    seed: u64,
    tag: StreamTag,
    key: u64,
    first: u64,
    count: usize,
    exec: Execution,
) -> Result<Vec<f64>, SimulationError> {
    map_indexed(exec, count, |j| {
        let mut rng = substream(seed, tag, key, first + j as u64);
        problem.replicate(x, model, &mut rng)
    })
    .into_iter()
    .collect()
}

/// Which problem to generate data for.
#[derive(Clone, Debug)]
pub enum DataRecipe {
    /// `m` exponential interarrival and service times at the true means.
    Mm1k { config: Mm1kConfig, m: usize },
    /// `calls` locations drawn from a per-neighborhood frequency map.
    Ambulance { frequency_map: Vec<usize>, calls: usize },
}

/// Synthetic "real-world" data, one observation set per source.
pub fn generate_real_world_data(recipe: &DataRecipe, seed: u64) -> Result<Vec<ObservationSet>, SimulationError> {
    let wrap = |e: crate::input_model::InputError| SimulationError::InvalidData(e.to_string());
    match recipe {
        DataRecipe::Mm1k { config, m } => {
            config.validate()?;
            if *m < 1 {
                return Err(SimulationError::InvalidConfig("sample size must be at least 1".into()));
            }
            [config.true_interarrival_mean, config.true_service_mean]
                .iter()
                .enumerate()
                .map(|(source, &mean)| {
                    let law = Exp::new(1.0 / mean).expect("positive mean");
                    let mut rng = substream(seed, StreamTag::RealWorldData, source as u64, 0);
                    let raw = (0..*m).map(|_| vec![law.sample(&mut rng)]).collect();
                    ObservationSet::from_observations(source, raw).map_err(wrap)
                })
                .collect()
        }
        DataRecipe::Ambulance { frequency_map, calls } => {
            if *calls < 1 {
                return Err(SimulationError::InvalidConfig("call count must be at least 1".into()));
            }
            let pick = WeightedIndex::new(frequency_map.iter().map(|&c| c as f64))
                .map_err(|e| SimulationError::InvalidData(e.to_string()))?;
            let mut rng = substream(seed, StreamTag::RealWorldData, 0, 0);
            let mut counts = vec![0usize; frequency_map.len()];
            for _ in 0..*calls {
                counts[pick.sample(&mut rng)] += 1;
            }
            Ok(vec![ambulance::counts_to_observations(&counts)?])
        }
    }
}
