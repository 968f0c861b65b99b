//! Composite covariance kernel over (solution, input model) pairs.
//!
//! `k(x, P; x', P') = tau^2 * gamma_X(x, x') * gamma_M(P, P')`, with a
//! squared-exponential `gamma_X` and `gamma_M = exp(-sum_l D_l^2 / vartheta_l)`.

use crate::exec::{fill_rows, map_indexed, Execution};
use crate::input_model::{divergence, DivergenceKind, InputError, JointInputModel};
use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative size of the one-shot diagonal jitter.
pub const JITTER: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("dimension mismatch: {expected} vs {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("parameter {name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("Cholesky factorization failed after jitter")]
    NotPositiveDefinite,
    #[error(transparent)]
    Input(#[from] InputError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub tau_sq: f64,
    /// One entry (shared across dimensions) or one per solution dimension.
    pub lambda: Vec<f64>,
    /// One entry per input source.
    pub vartheta: Vec<f64>,
}

impl KernelParams {
    pub fn validate(&self) -> Result<(), KernelError> {
        let named = std::iter::once(("tau_sq", self.tau_sq))
            .chain(self.lambda.iter().map(|&v| ("lambda", v)))
            .chain(self.vartheta.iter().map(|&v| ("vartheta", v)));
        for (name, value) in named {
            if !(value > 0.0 && value.is_finite()) {
                return Err(KernelError::NonPositive { name, value });
            }
        }
        Ok(())
    }

    fn lambda_at(&self, s: usize) -> f64 {
        if self.lambda.len() == 1 {
            self.lambda[0]
        } else {
            self.lambda[s]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairIndex {
    pub solution: usize,
    pub model: usize,
}

impl PairIndex {
    pub fn new(solution: usize, model: usize) -> Self {
        Self { solution, model }
    }

    /// Position in the solution-major layout used by the GP state.
    pub fn flat(self, models: usize) -> usize {
        self.solution * models + self.model
    }

    pub fn from_flat(p: usize, models: usize) -> Self {
        Self::new(p / models, p % models)
    }
}

/// How the distance between two draws of one source is measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SourceMetric {
    Divergence(DivergenceKind),
    /// Squared Euclidean distance between the means of the simplices over
    /// `support`, standing in for a parameter vector.
    Parametric { support: Vec<Vec<f64>> },
}

fn check_lambda(dim: usize, lambda: &[f64]) -> Result<(), KernelError> {
    if lambda.len() != 1 && lambda.len() != dim {
        return Err(KernelError::DimensionMismatch {
            expected: dim,
            found: lambda.len(),
        });
    }
    Ok(())
}

pub fn gamma_x(x: &[f64], x_prime: &[f64], lambda: &[f64]) -> Result<f64, KernelError> {
    if x.len() != x_prime.len() {
        return Err(KernelError::DimensionMismatch {
            expected: x.len(),
            found: x_prime.len(),
        });
    }
    check_lambda(x.len(), lambda)?;
    let exponent: f64 = x
        .iter()
        .zip(x_prime)
        .enumerate()
        .map(|(s, (a, b))| {
            let l = if lambda.len() == 1 { lambda[0] } else { lambda[s] };
            (a - b).powi(2) / l
        })
        .sum();
    Ok((-exponent).exp())
}

/// `sum_l D_l^2(P_l, P'_l)` without the length-scales, one entry per source.
pub fn source_distances(
    p: &JointInputModel,
    p_prime: &JointInputModel,
    metrics: &[SourceMetric],
) -> Result<Vec<f64>, KernelError> {
    if p.num_sources() != metrics.len() || p_prime.num_sources() != metrics.len() {
        return Err(KernelError::DimensionMismatch {
            expected: metrics.len(),
            found: p.num_sources().min(p_prime.num_sources()),
        });
    }
    metrics
        .iter()
        .zip(p.per_source.iter().zip(&p_prime.per_source))
        .map(|(metric, (a, b))| match metric {
            SourceMetric::Divergence(kind) => Ok(divergence(a, b, *kind)?),
            SourceMetric::Parametric { support } => {
                let ta = a.weighted_mean(support);
                let tb = b.weighted_mean(support);
                Ok(ta.iter().zip(&tb).map(|(u, v)| (u - v).powi(2)).sum())
            }
        })
        .collect()
}

pub fn gamma_m(
    p: &JointInputModel,
    p_prime: &JointInputModel,
    vartheta: &[f64],
    metrics: &[SourceMetric],
) -> Result<f64, KernelError> {
    if vartheta.len() != metrics.len() {
        return Err(KernelError::DimensionMismatch {
            expected: metrics.len(),
            found: vartheta.len(),
        });
    }
    let d = source_distances(p, p_prime, metrics)?;
    Ok((-d.iter().zip(vartheta).map(|(d, t)| d / t).sum::<f64>()).exp())
}

/// Per-source `B x B` tables of squared distances between the fixed draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceTable {
    models: usize,
    per_source: Vec<Vec<f64>>,
}

impl DivergenceTable {
    pub fn build(
        models: &[JointInputModel],
        metrics: &[SourceMetric],
        exec: Execution,
    ) -> Result<Self, KernelError> {
        let b = models.len();
        let rows = map_indexed(exec, b, |i| {
            (0..b)
                .map(|j| source_distances(&models[i], &models[j], metrics))
                .collect::<Result<Vec<_>, _>>()
        });
        let mut per_source = vec![vec![0.0; b * b]; metrics.len()];
        for (i, row) in rows.into_iter().enumerate() {
            for (j, dists) in row?.into_iter().enumerate() {
                for (l, d) in dists.into_iter().enumerate() {
                    per_source[l][i * b + j] = d;
                }
            }
        }
        Ok(Self { models: b, per_source })
    }

    /// Wraps precomputed row-major `B x B` tables.
    pub fn from_raw(models: usize, per_source: Vec<Vec<f64>>) -> Result<Self, KernelError> {
        for t in &per_source {
            if t.len() != models * models {
                return Err(KernelError::DimensionMismatch {
                    expected: models * models,
                    found: t.len(),
                });
            }
        }
        Ok(Self { models, per_source })
    }

    pub fn models(&self) -> usize {
        self.models
    }

    pub fn sources(&self) -> usize {
        self.per_source.len()
    }

    pub fn get(&self, source: usize, b: usize, b_prime: usize) -> f64 {
        self.per_source[source][b * self.models + b_prime]
    }
}

/// Everything the kernel needs besides its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelContext {
    pub solutions: Vec<Vec<f64>>,
    pub table: DivergenceTable,
}

impl KernelContext {
    pub fn new(solutions: Vec<Vec<f64>>, table: DivergenceTable) -> Self {
        Self { solutions, table }
    }

    pub fn num_solutions(&self) -> usize {
        self.solutions.len()
    }

    pub fn num_models(&self) -> usize {
        self.table.models()
    }

    pub fn num_pairs(&self) -> usize {
        self.num_solutions() * self.num_models()
    }

    pub fn solution_dim(&self) -> usize {
        self.solutions.first().map_or(0, Vec::len)
    }

    /// Precomputes both correlation factors for `params`.
    pub fn evaluate(&self, params: &KernelParams) -> Result<KernelMatrices, KernelError> {
        params.validate()?;
        check_lambda(self.solution_dim(), &params.lambda)?;
        if params.vartheta.len() != self.table.sources() {
            return Err(KernelError::DimensionMismatch {
                expected: self.table.sources(),
                found: params.vartheta.len(),
            });
        }
        let nx = self.num_solutions();
        let gx = DMatrix::from_fn(nx, nx, |i, j| {
            let e: f64 = self.solutions[i]
                .iter()
                .zip(&self.solutions[j])
                .enumerate()
                .map(|(s, (a, b))| (a - b).powi(2) / params.lambda_at(s))
                .sum();
            (-e).exp()
        });
        let nb = self.num_models();
        let gm = DMatrix::from_fn(nb, nb, |i, j| {
            let e: f64 = (0..self.table.sources())
                .map(|l| self.table.get(l, i, j) / params.vartheta[l])
                .sum();
            (-e).exp()
        });
        Ok(KernelMatrices {
            tau_sq: params.tau_sq,
            gx,
            gm,
        })
    }
}

/// Kernel values as the product of two small precomputed factors.
#[derive(Clone, Debug)]
pub struct KernelMatrices {
    pub tau_sq: f64,
    pub gx: DMatrix<f64>,
    pub gm: DMatrix<f64>,
}

impl KernelMatrices {
    pub fn num_models(&self) -> usize {
        self.gm.nrows()
    }

    pub fn kernel(&self, a: PairIndex, b: PairIndex) -> f64 {
        self.tau_sq * self.gx[(a.solution, b.solution)] * self.gm[(a.model, b.model)]
    }

    pub fn kernel_flat(&self, p: usize, q: usize) -> f64 {
        let nb = self.num_models();
        self.tau_sq * self.gx[(p / nb, q / nb)] * self.gm[(p % nb, q % nb)]
    }

    pub fn gram(&self, indices: &[PairIndex], exec: Execution) -> DMatrix<f64> {
        let n = indices.len();
        let mut out = DMatrix::zeros(n, n);
        // column-major storage: column j is a contiguous chunk
        fill_rows(exec, out.as_mut_slice(), n, |j, col| {
            for (i, v) in col.iter_mut().enumerate() {
                *v = self.kernel(indices[i], indices[j]);
            }
        });
        out
    }

    /// Cross-covariance matrix with `K[i, j] = k(rows[i], cols[j])`.
    pub fn cross(&self, rows: &[PairIndex], cols: &[PairIndex], exec: Execution) -> DMatrix<f64> {
        let m = rows.len();
        let mut out = DMatrix::zeros(m, cols.len());
        fill_rows(exec, out.as_mut_slice(), m, |j, col| {
            for (i, v) in col.iter_mut().enumerate() {
                *v = self.kernel(rows[i], cols[j]);
            }
        });
        out
    }

    /// Cross-covariance between `rows` and every pair in flat order.
    pub fn cross_all(&self, rows: &[PairIndex], exec: Execution) -> DMatrix<f64> {
        let nb = self.num_models();
        let all: Vec<_> = (0..self.gx.nrows() * nb)
            .map(|p| PairIndex::from_flat(p, nb))
            .collect();
        self.cross(rows, &all, exec)
    }

    /// Prior covariance over all pairs in flat order.
    pub fn full_gram(&self, exec: Execution) -> DMatrix<f64> {
        let n = self.gx.nrows() * self.num_models();
        let mut out = DMatrix::zeros(n, n);
        fill_rows(exec, out.as_mut_slice(), n, |q, col| {
            for (p, v) in col.iter_mut().enumerate() {
                *v = self.kernel_flat(p, q);
            }
        });
        out
    }
}

/// Largest absolute asymmetry `|A_ij - A_ji|`.
pub fn max_asymmetry(mat: &DMatrix<f64>) -> f64 {
    let n = mat.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((mat[(i, j)] - mat[(j, i)]).abs());
        }
    }
    worst
}

/// Checks symmetry and `min eigenvalue >= -1e-8 * scale`; returns the
/// smallest eigenvalue.
pub fn check_psd(mat: &DMatrix<f64>, scale: f64) -> Result<f64, KernelError> {
    let asym = max_asymmetry(mat);
    if asym > 1e-12 * scale.max(1.0) {
        return Err(KernelError::NotSymmetric(asym));
    }
    let min_eig = SymmetricEigen::new(mat.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -JITTER * scale {
        return Err(KernelError::NotPsd(min_eig));
    }
    Ok(min_eig)
}

/// Cholesky factorization; on failure retries once with `1e-8 * scale` added
/// to the diagonal. Returns the factor and whether jitter was needed.
pub fn cholesky_with_jitter(
    mat: DMatrix<f64>,
    scale: f64,
) -> Result<(Cholesky<f64, Dyn>, bool), KernelError> {
    if let Some(chol) = Cholesky::new(mat.clone()) {
        return Ok((chol, false));
    }
    let mut jittered = mat;
    let n = jittered.nrows();
    for i in 0..n {
        jittered[(i, i)] += JITTER * scale;
    }
    Cholesky::new(jittered)
        .map(|c| (c, true))
        .ok_or(KernelError::NotPositiveDefinite)
}
