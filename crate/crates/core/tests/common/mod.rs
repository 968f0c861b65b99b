//! Independent oracles shared by the integration tests. Nothing here calls
//! the library's update or acquisition code; states are built through the
//! public API and then checked against dense textbook formulas.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use srsi::exec::Execution;
use srsi::gp::{GpState, ObservationRow, SimulationLog};
use srsi::kernels::{KernelMatrices, KernelParams, PairIndex};

pub fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn big_phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `Phi(z / sigma)`, with the step function at `sigma = 0`.
pub fn cdf_ratio(z: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        big_phi(z / sigma)
    } else if z > 0.0 {
        1.0
    } else if z < 0.0 {
        0.0
    } else {
        0.5
    }
}

pub fn params() -> KernelParams {
    KernelParams {
        tau_sq: 1.0,
        lambda: vec![4.0],
        vartheta: vec![0.2],
    }
}

/// Separable kernel factors with random coordinates and random model
/// similarities (a Gaussian kernel on random points, hence PSD).
pub fn random_kernel(rng: &mut ChaCha8Rng, nx: usize, nb: usize, p: &KernelParams) -> KernelMatrices {
    let xs: Vec<f64> = (0..nx).map(|i| i as f64 + 0.3 * rng.random::<f64>()).collect();
    let ms: Vec<[f64; 2]> = (0..nb).map(|_| [rng.random(), rng.random()]).collect();
    KernelMatrices {
        tau_sq: p.tau_sq,
        gx: DMatrix::from_fn(nx, nx, |i, j| (-(xs[i] - xs[j]).powi(2) / p.lambda[0]).exp()),
        gm: DMatrix::from_fn(nb, nb, |i, j| {
            let d = (ms[i][0] - ms[j][0]).powi(2) + (ms[i][1] - ms[j][1]).powi(2);
            (-d / p.vartheta[0]).exp()
        }),
    }
}

/// A posterior conditioned on `observed` random pairs with a few noisy
/// replications each.
pub fn random_state(rng: &mut ChaCha8Rng, nx: usize, nb: usize, observed: usize) -> GpState {
    let p = params();
    let km = random_kernel(rng, nx, nb, &p);
    let mut log = SimulationLog::new();
    for _ in 0..observed {
        let pair = PairIndex::new(rng.random_range(0..nx), rng.random_range(0..nb));
        let level = (pair.solution as f64 - nx as f64 / 2.0).powi(2) * 0.2 + pair.model as f64 * 0.1;
        let ys: Vec<f64> = (0..rng.random_range(3..7))
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                level + 0.5 * z
            })
            .collect();
        log.record(pair, &ys);
    }
    GpState::new(km, p, 0.0, log, Execution::Sequential).unwrap()
}

/// Prior covariance over the flat grid, written out element by element.
pub fn prior_cov(km: &KernelMatrices) -> DMatrix<f64> {
    let (nx, nb) = (km.gx.nrows(), km.gm.nrows());
    DMatrix::from_fn(nx * nb, nx * nb, |p, q| {
        km.tau_sq * km.gx[(p / nb, q / nb)] * km.gm[(p % nb, q % nb)]
    })
}

/// `K - K_O (K_OO + Sigma)^{-1} K_O^T` by explicit inversion.
pub fn dense_posterior_cov(km: &KernelMatrices, rows: &[(usize, f64)]) -> DMatrix<f64> {
    let k = prior_cov(km);
    let n = k.nrows();
    let m = rows.len();
    let mut a = DMatrix::from_fn(m, m, |i, j| k[(rows[i].0, rows[j].0)]);
    for (i, r) in rows.iter().enumerate() {
        a[(i, i)] += r.1;
    }
    let inv = a.try_inverse().expect("invertible conditioning block");
    let c = DMatrix::from_fn(n, m, |p, i| k[(p, rows[i].0)]);
    &k - &c * inv * c.transpose()
}

pub fn flat_rows(rows: &[ObservationRow], nb: usize) -> Vec<(usize, f64)> {
    rows.iter().map(|r| (r.pair.flat(nb), r.noise_var)).collect()
}

pub fn pair_var(v: &DMatrix<f64>, p: usize, q: usize) -> f64 {
    (v[(p, p)] - 2.0 * v[(p, q)] + v[(q, q)]).max(0.0)
}

/// Predictive law of the next posterior mean after observing `pairs` with
/// mean-noise variances `noise`: returns the matrix `G` such that
/// `mu_{t+1} - mu_t = G xi`, `xi ~ N(0, I)`, and the next covariance.
pub fn predictive(v: &DMatrix<f64>, pairs: &[usize], noise: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = v.nrows();
    let k = pairs.len();
    let mut m = DMatrix::from_fn(k, k, |i, j| v[(pairs[i], pairs[j])]);
    for i in 0..k {
        m[(i, i)] += noise[i];
    }
    let c = DMatrix::from_fn(n, k, |p, i| v[(p, pairs[i])]);
    let l = m.clone().cholesky().expect("positive definite").l();
    let linv_t = l.try_inverse().expect("triangular").transpose();
    let g = &c * linv_t;
    let next = v - &c * m.try_inverse().unwrap() * c.transpose();
    (g, next)
}

/// Per-solution linearised risk probability after the update, for one
/// predictive draw `dmu`.
pub fn linearised_probs(
    mu: &DVector<f64>,
    next: &DMatrix<f64>,
    dmu: &DVector<f64>,
    nx: usize,
    nb: usize,
    xhat: usize,
    delta: f64,
) -> Vec<f64> {
    (0..nx)
        .map(|x| {
            if x == xhat {
                return 0.0;
            }
            (0..nb)
                .map(|b| {
                    let (h, q) = (xhat * nb + b, x * nb + b);
                    let s = pair_var(next, h, q).sqrt();
                    let g = mu[h] - mu[q] - delta;
                    let d = dmu[h] - dmu[q];
                    if s > 0.0 {
                        big_phi(g / s) + phi(g / s) * d / s
                    } else {
                        cdf_ratio(g, s)
                    }
                })
                .sum::<f64>()
                / nb as f64
        })
        .collect()
}

pub fn standard_normals(rng: &mut ChaCha8Rng, k: usize) -> DVector<f64> {
    DVector::from_fn(k, |_, _| StandardNormal.sample(rng))
}

/// Mean and standard error of a sample.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Exact one-sided Mann-Whitney p-value that sample `a` tends to exceed `b`,
/// by enumerating every split of the pooled ranks (ties get mid-ranks).
pub fn mann_whitney_greater(a: &[f64], b: &[f64]) -> (f64, f64) {
    let u = |xs: &[f64], ys: &[f64]| -> f64 {
        xs.iter()
            .map(|x| {
                ys.iter()
                    .map(|y| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 })
                    .sum::<f64>()
            })
            .sum()
    };
    let observed = u(a, b);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let k = a.len();
    let (mut hits, mut total) = (0u64, 0u64);
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let chosen: Vec<f64> = idx.iter().map(|&i| pooled[i]).collect();
        let rest: Vec<f64> = (0..n).filter(|i| !idx.contains(i)).map(|i| pooled[i]).collect();
        total += 1;
        if u(&chosen, &rest) >= observed - 1e-9 {
            hits += 1;
        }
        // next k-combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return (observed, hits as f64 / total as f64);
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Kriging mean and covariance over the whole grid by explicit inversion.
pub fn dense_posterior(km: &KernelMatrices, rows: &[ObservationRow], beta0: f64) -> (DVector<f64>, DMatrix<f64>) {
    let nb = km.gm.nrows();
    let k = prior_cov(km);
    let idx: Vec<usize> = rows.iter().map(|r| r.pair.flat(nb)).collect();
    let m = rows.len();
    let mut a = DMatrix::from_fn(m, m, |i, j| k[(idx[i], idx[j])]);
    for (i, r) in rows.iter().enumerate() {
        a[(i, i)] += r.noise_var;
    }
    let inv = a.try_inverse().expect("invertible conditioning block");
    let c = DMatrix::from_fn(k.nrows(), m, |p, i| k[(p, idx[i])]);
    let resid = DVector::from_iterator(m, rows.iter().map(|r| r.mean - beta0));
    let mean = DVector::from_element(k.nrows(), beta0) + &c * &inv * resid;
    let cov = &k - &c * inv * c.transpose();
    (mean, cov)
}
