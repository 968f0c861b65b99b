//! Nonparametric Bayesian input models.
//!
//! Each input source is represented by the distinct values observed in its
//! real-world data. Uncertainty about the source distribution is a Dirichlet
//! law over the probability simplex on those values; draws from the posterior
//! are Bayesian-bootstrap weightings of the data.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

/// Tolerance for the sum-to-one invariant of a simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum InputError {
    #[error("source {source_index} has no observations")]
    Empty { source_index: usize },
    #[error("observation {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite observation at index {index}")]
    NonFinite { index: usize },
    #[error("zero count for support point {index}")]
    ZeroCount { index: usize },
    #[error("concentration vector has length {found}, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("concentration {index} is not positive: {value}")]
    NonPositiveConcentration { index: usize, value: f64 },
    #[error("posterior mode is not defined: concentrations must be at least 1 and not all equal to 1")]
    DegeneratePosterior,
    #[error("weights do not form a probability simplex (sum {sum})")]
    NotASimplex { sum: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Real-world observations of one input source, collapsed onto distinct values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub source_index: usize,
    pub raw_observations: Vec<Vec<f64>>,
    pub distinct_support: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

fn canonical_key(v: &[f64]) -> String {
    let mut key = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            key.push(',');
        }
        // `{}` on f64 is the shortest round-trip decimal form
        write!(key, "{x}").unwrap();
    }
    key
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

impl ObservationSet {
    /// Collapses raw observations onto their distinct values, sorted
    /// lexicographically. Ties are decided on the canonical decimal form.
    pub fn from_observations(
        source_index: usize,
        raw: Vec<Vec<f64>>,
    ) -> Result<Self, InputError> {
        let dim = raw.first().map(Vec::len).ok_or(InputError::Empty { source_index })?;
        let mut grouped: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
        for (index, obs) in raw.iter().enumerate() {
            if obs.len() != dim {
                return Err(InputError::DimensionMismatch {
                    index,
                    expected: dim,
                    found: obs.len(),
                });
            }
            if obs.iter().any(|x| !x.is_finite()) {
                return Err(InputError::NonFinite { index });
            }
            grouped
                .entry(canonical_key(obs))
                .or_insert_with(|| (obs.clone(), 0))
                .1 += 1;
        }
        let mut entries: Vec<(Vec<f64>, usize)> = grouped.into_values().collect();
        entries.sort_by(|a, b| lexicographic(&a.0, &b.0));
        let (distinct_support, counts) = entries.into_iter().unzip();
        Ok(Self {
            source_index,
            raw_observations: raw,
            distinct_support,
            counts,
        })
    }

    /// Builds a set from pre-aggregated `(value, count)` pairs. Duplicate
    /// values are merged.
    pub fn from_counts(
        source_index: usize,
        values: Vec<Vec<f64>>,
        counts: Vec<usize>,
    ) -> Result<Self, InputError> {
        if values.len() != counts.len() {
            return Err(InputError::LengthMismatch {
                expected: values.len(),
                found: counts.len(),
            });
        }
        if let Some(index) = counts.iter().position(|&c| c == 0) {
            return Err(InputError::ZeroCount { index });
        }
        let mut raw = Vec::with_capacity(counts.iter().sum());
        for (v, &c) in values.iter().zip(&counts) {
            for _ in 0..c {
                raw.push(v.clone());
            }
        }
        Self::from_observations(source_index, raw)
    }

    pub fn sample_size(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn support_size(&self) -> usize {
        self.counts.len()
    }

    pub fn dimension(&self) -> usize {
        self.distinct_support.first().map_or(0, Vec::len)
    }
}

fn parse_row(line: &str, lineno: usize) -> Result<Vec<f64>, InputError> {
    line.split(',')
        .map(|field| {
            field.trim().parse::<f64>().map_err(|e| InputError::Parse {
                line: lineno,
                message: format!("invalid number {:?}: {e}", field.trim()),
            })
        })
        .collect()
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses one observation per line (scalar, or comma-separated vector).
/// Blank lines and `#` comments are skipped.
pub fn parse_observations(source_index: usize, text: &str) -> Result<ObservationSet, InputError> {
    let mut raw = Vec::new();
    for (lineno, line) in data_lines(text) {
        raw.push(parse_row(line, lineno)?);
    }
    ObservationSet::from_observations(source_index, raw)
}

/// Parses `value,count` lines; a vector value uses all fields but the last.
pub fn parse_counts(source_index: usize, text: &str) -> Result<ObservationSet, InputError> {
    let mut values = Vec::new();
    let mut counts = Vec::new();
    for (lineno, line) in data_lines(text) {
        let (value, count) = line.rsplit_once(',').ok_or_else(|| InputError::Parse {
            line: lineno,
            message: "expected `value,count`".into(),
        })?;
        let count = count.trim().parse::<usize>().map_err(|e| InputError::Parse {
            line: lineno,
            message: format!("invalid count {:?}: {e}", count.trim()),
        })?;
        if count == 0 {
            return Err(InputError::Parse {
                line: lineno,
                message: "count must be positive".into(),
            });
        }
        values.push(parse_row(value, lineno)?);
        counts.push(count);
    }
    ObservationSet::from_counts(source_index, values, counts)
}

/// Dirichlet posterior over the simplex of one source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletPosterior {
    pub concentrations: Vec<f64>,
    pub prior_kappa: Vec<f64>,
}

/// Conjugate update: concentration `j` is `count_j + kappa_j`.
pub fn build_posterior(data: &ObservationSet, kappa: &[f64]) -> Result<DirichletPosterior, InputError> {
    if kappa.len() != data.support_size() {
        return Err(InputError::LengthMismatch {
            expected: data.support_size(),
            found: kappa.len(),
        });
    }
    if let Some((index, &value)) = kappa.iter().enumerate().find(|(_, &k)| !(k > 0.0)) {
        return Err(InputError::NonPositiveConcentration { index, value });
    }
    let concentrations = data
        .counts
        .iter()
        .zip(kappa)
        .map(|(&c, &k)| c as f64 + k)
        .collect();
    Ok(DirichletPosterior {
        concentrations,
        prior_kappa: kappa.to_vec(),
    })
}

impl DirichletPosterior {
    pub fn len(&self) -> usize {
        self.concentrations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concentrations.is_empty()
    }

    pub fn mean(&self) -> Vec<f64> {
        let total: f64 = self.concentrations.iter().sum();
        self.concentrations.iter().map(|a| a / total).collect()
    }
}

/// A probability vector over the distinct support of one source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilitySimplex {
    weights: Vec<f64>,
}

impl ProbabilitySimplex {
    pub fn new(weights: Vec<f64>) -> Result<Self, InputError> {
        let sum: f64 = weights.iter().sum();
        if weights.is_empty()
            || weights.iter().any(|w| !(*w >= 0.0))
            || (sum - 1.0).abs() > SIMPLEX_TOLERANCE
        {
            return Err(InputError::NotASimplex { sum });
        }
        Ok(Self { weights })
    }

    /// Rescales nonnegative weights to sum to one.
    pub fn normalized(weights: Vec<f64>) -> Result<Self, InputError> {
        let sum: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || !(sum > 0.0) || !sum.is_finite() {
            return Err(InputError::NotASimplex { sum });
        }
        Ok(Self {
            weights: weights.into_iter().map(|w| w / sum).collect(),
        })
    }

    pub fn uniform(len: usize) -> Self {
        Self {
            weights: vec![1.0 / len as f64; len],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Expectation of the support points under these weights.
    pub fn weighted_mean(&self, support: &[Vec<f64>]) -> Vec<f64> {
        let dim = support.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; dim];
        for (w, v) in self.weights.iter().zip(support) {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += w * x;
            }
        }
        mean
    }
}

/// Posterior mode. With a uniform prior (kappa = 1) this is the empirical
/// distribution of the data.
pub fn map_simplex(post: &DirichletPosterior) -> Result<ProbabilitySimplex, InputError> {
    if post.concentrations.iter().any(|&a| a < 1.0) {
        return Err(InputError::DegeneratePosterior);
    }
    let excess: Vec<f64> = post.concentrations.iter().map(|a| a - 1.0).collect();
    if excess.iter().sum::<f64>() <= 0.0 {
        return Err(InputError::DegeneratePosterior);
    }
    ProbabilitySimplex::normalized(excess)
}

/// One Dirichlet draw via normalised independent Gamma(alpha_j, 1) variates.
pub fn sample_simplex<R: Rng + ?Sized>(post: &DirichletPosterior, rng: &mut R) -> ProbabilitySimplex {
    loop {
        let draws: Vec<f64> = post
            .concentrations
            .iter()
            .map(|&a| Gamma::new(a, 1.0).expect("positive concentration").sample(rng))
            .collect();
        // all-zero underflow is only possible for tiny concentrations
        if let Ok(simplex) = ProbabilitySimplex::normalized(draws) {
            return simplex;
        }
    }
}

/// One joint input model: a simplex per source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointInputModel {
    pub per_source: Vec<ProbabilitySimplex>,
}

impl JointInputModel {
    pub fn num_sources(&self) -> usize {
        self.per_source.len()
    }
}

/// `count` independent joint draws from the product posterior.
pub fn sample_joint<R: Rng + ?Sized>(
    posteriors: &[DirichletPosterior],
    count: usize,
    rng: &mut R,
) -> Vec<JointInputModel> {
    (0..count)
        .map(|_| JointInputModel {
            per_source: posteriors.iter().map(|p| sample_simplex(p, rng)).collect(),
        })
        .collect()
}

/// The joint model made of each source's posterior mode.
pub fn map_joint(posteriors: &[DirichletPosterior]) -> Result<JointInputModel, InputError> {
    Ok(JointInputModel {
        per_source: posteriors.iter().map(map_simplex).collect::<Result<_, _>>()?,
    })
}

/// Squared-distance f-divergences that yield positive definite kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DivergenceKind {
    TotalVariation,
    SqHellinger,
    JensenShannon,
}

impl DivergenceKind {
    pub fn code(self) -> u32 {
        match self {
            DivergenceKind::TotalVariation => 0,
            DivergenceKind::SqHellinger => 1,
            DivergenceKind::JensenShannon => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(DivergenceKind::TotalVariation),
            1 => Some(DivergenceKind::SqHellinger),
            2 => Some(DivergenceKind::JensenShannon),
            _ => None,
        }
    }
}

fn xlog_ratio(p: f64, m: f64) -> f64 {
    // 0 ln(0 / m) := 0
    if p == 0.0 {
        0.0
    } else {
        p * (p / m).ln()
    }
}

/// `D^2(p, q)` summed coordinate-wise over a shared support.
pub fn divergence(
    p: &ProbabilitySimplex,
    q: &ProbabilitySimplex,
    kind: DivergenceKind,
) -> Result<f64, InputError> {
    if p.len() != q.len() {
        return Err(InputError::LengthMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    let pairs = p.weights.iter().zip(&q.weights);
    let value = match kind {
        DivergenceKind::TotalVariation => pairs.map(|(a, b)| 0.5 * (a - b).abs()).sum(),
        DivergenceKind::SqHellinger => pairs
            .map(|(a, b)| {
                let d = a.sqrt() - b.sqrt();
                0.25 * d * d
            })
            .sum(),
        DivergenceKind::JensenShannon => pairs
            .map(|(&a, &b)| {
                let m = 0.5 * (a + b);
                0.5 * (xlog_ratio(a, m) + xlog_ratio(b, m))
            })
            .sum::<f64>(),
    };
    Ok(value.max(0.0))
}
