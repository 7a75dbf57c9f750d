//! Shared fixture builders for the integration tests.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use windrom::ingest::{uniform_levels, SnapshotGrid, VelocityEnsemble};

pub fn normals(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect()
}

/// Standard normals shifted and scaled to exact sample mean 0 and
/// population variance 1.
pub fn standardized(seed: u64, count: usize) -> Vec<f64> {
    let mut v = normals(seed, count);
    let n = count as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter_mut().for_each(|x| *x -= mean);
    let sd = (v.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    v.iter_mut().for_each(|x| *x /= sd);
    v
}

pub fn grid(nz: usize, nx: usize, dx: f64, interval_s: f64) -> SnapshotGrid {
    SnapshotGrid {
        z_levels: uniform_levels(4.5, 10.0, nz),
        nx,
        dx,
        interval_s,
    }
}

/// Separable discrete cosine `cos(pi a (z + 1/2) / nz) cos(pi b (x + 1/2) / nx)`
/// scaled to unit norm under the grid quadrature. Distinct `(a, b)` pairs are
/// orthogonal.
pub fn cosine_shape(grid: &SnapshotGrid, a: usize, b: usize) -> Vec<f64> {
    let (nz, nx) = (grid.nz(), grid.nx);
    let pi = std::f64::consts::PI;
    let mut f: Vec<f64> = (0..nz * nx)
        .map(|p| {
            let (z, x) = ((p / nx) as f64, (p % nx) as f64);
            (pi * a as f64 * (z + 0.5) / nz as f64).cos()
                * (pi * b as f64 * (x + 0.5) / nx as f64).cos()
        })
        .collect();
    let norm = (grid.cell_weight() * f.iter().map(|v| v * v).sum::<f64>()).sqrt();
    f.iter_mut().for_each(|v| *v /= norm);
    f
}

/// Zero-mean temporal cosine with integer frequency `k` over `m` intervals,
/// unit norm under `dt * sum`.
pub fn temporal_cosine(m: usize, k: usize, dt: f64) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    let scale = (2.0 / (m as f64 * dt)).sqrt();
    (0..m)
        .map(|t| scale * (2.0 * pi * k as f64 * (t as f64 + 0.5) / m as f64).cos())
        .collect()
}

/// A realization-major ensemble from `value(k, t, p)`.
pub fn ensemble_from_fn(
    grid: SnapshotGrid,
    n: usize,
    m: usize,
    value: impl Fn(usize, usize, usize) -> f64,
) -> VelocityEnsemble {
    let p = grid.points();
    let mut data = Vec::with_capacity(n * m * p);
    for k in 0..n {
        for t in 0..m {
            for q in 0..p {
                data.push(value(k, t, q));
            }
        }
    }
    VelocityEnsemble::new(data, grid, n, m).expect("valid fixture")
}

/// Random ensemble with a smooth mean profile and Gaussian values.
pub fn random_ensemble(seed: u64, n: usize, m: usize, nz: usize, nx: usize) -> VelocityEnsemble {
    let g = grid(nz, nx, 2.0, 600.0);
    let p = g.points();
    let noise = normals(seed, n * m * p);
    let data = noise
        .iter()
        .enumerate()
        .map(|(i, e)| 6.0 + 0.2 * ((i % p) / nx) as f64 + e)
        .collect();
    VelocityEnsemble::new(data, g, n, m).expect("valid fixture")
}
