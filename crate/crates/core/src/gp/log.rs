use crate::kernels::PairIndex;
use crate::stats::RunningMoments;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Running statistics of one simulated pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair: PairIndex,
    pub moments: RunningMoments,
}

impl PairRecord {
    pub fn sample_mean(&self) -> f64 {
        self.moments.mean
    }

    pub fn sample_variance(&self) -> f64 {
        self.moments.sample_variance()
    }

    pub fn replications(&self) -> u64 {
        self.moments.count
    }
}

/// One conditioning row of the GP: the sample mean at a pair and the
/// variance of that mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRow {
    pub pair: PairIndex,
    pub mean: f64,
    pub noise_var: f64,
}

/// Distinct simulated pairs in first-visit order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationLog {
    records: Vec<PairRecord>,
    #[serde(skip)]
    lookup: BTreeMap<PairIndex, usize>,
    pub iteration: u64,
}

impl SimulationLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds the pair lookup after deserialization.
    pub fn reindex(&mut self) {
        self.lookup = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.pair, i))
            .collect();
    }

    /// Merges `samples` into the statistics of `pair`. Returns the record's
    /// position and its state before the merge, if it existed.
    pub fn record(&mut self, pair: PairIndex, samples: &[f64]) -> (usize, Option<PairRecord>) {
        let fresh = RunningMoments::from_samples(samples);
        match self.lookup.get(&pair) {
            Some(&i) => {
                let before = self.records[i];
                self.records[i].moments.merge(&fresh);
                (i, Some(before))
            }
            None => {
                let i = self.records.len();
                self.records.push(PairRecord { pair, moments: fresh });
                self.lookup.insert(pair, i);
                (i, None)
            }
        }
    }

    pub fn records(&self) -> &[PairRecord] {
        &self.records
    }

    pub fn get(&self, pair: PairIndex) -> Option<&PairRecord> {
        self.lookup.get(&pair).map(|&i| &self.records[i])
    }

    /// Number of distinct simulated pairs.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_replications(&self) -> u64 {
        self.records.iter().map(|r| r.replications()).sum()
    }

    /// Conditioning rows with `S^2 / r`, floored at `noise_floor`.
    pub fn rows(&self, noise_floor: f64) -> Vec<ObservationRow> {
        self.records
            .iter()
            .map(|r| row_of(r, noise_floor))
            .collect()
    }

    /// Replications per solution, summed over models.
    pub fn solution_frequencies(&self, num_solutions: usize) -> Vec<u64> {
        let mut freq = vec![0; num_solutions];
        for r in &self.records {
            freq[r.pair.solution] += r.replications();
        }
        freq
    }
}

pub(crate) fn row_of(r: &PairRecord, noise_floor: f64) -> ObservationRow {
    ObservationRow {
        pair: r.pair,
        mean: r.sample_mean(),
        noise_var: (r.sample_variance() / r.replications() as f64).max(noise_floor),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resampling_merges() {
        let mut log = SimulationLog::new();
        let p = PairIndex::new(1, 2);
        let (i, before) = log.record(p, &[1.0, 3.0]);
        assert_eq!((i, before), (0, None));
        log.record(PairIndex::new(0, 0), &[5.0, 5.5]);
        let (i, before) = log.record(p, &[2.0, 6.0]);
        assert_eq!(i, 0);
        assert_eq!(before.unwrap().replications(), 2);
        let rec = log.get(p).unwrap();
        assert_eq!(rec.replications(), 4);
        assert!((rec.sample_mean() - 3.0).abs() < 1e-15);
        // unbiased variance of {1,3,2,6}
        assert!((rec.sample_variance() - 14.0 / 3.0).abs() < 1e-12);
        assert_eq!(log.len(), 2);
        assert_eq!(log.total_replications(), 6);
        let rows = log.rows(0.0);
        assert!((rows[0].noise_var - 14.0 / 12.0).abs() < 1e-12);
        assert_eq!(log.solution_frequencies(2), vec![2, 4]);
    }

    #[test]
    fn reindex_after_roundtrip() {
        let mut log = SimulationLog::new();
        log.record(PairIndex::new(0, 1), &[1.0, 2.0]);
        let text = serde_json::to_string(&log).unwrap();
        let mut back: SimulationLog = serde_json::from_str(&text).unwrap();
        back.reindex();
        assert!(back.get(PairIndex::new(0, 1)).is_some());
        back.record(PairIndex::new(0, 1), &[3.0]);
        assert_eq!(back.len(), 1);
    }
}
