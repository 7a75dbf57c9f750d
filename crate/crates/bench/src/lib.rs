//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use windrom::ingest::{uniform_levels, SnapshotGrid, VelocityEnsemble};

/// Ensemble of `n` days with `m` intervals on an `nz x nx` grid: a few
/// smooth modes with random amplitudes plus white noise.
pub fn ensemble(seed: u64, n: usize, m: usize, nz: usize, nx: usize) -> VelocityEnsemble {
    let grid = SnapshotGrid {
        z_levels: uniform_levels(4.5, 10.0, nz),
        nx,
        dx: 2.0,
        interval_s: 86_400.0 / m as f64,
    };
    let p = grid.points();
    let pi = std::f64::consts::PI;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * m * p);
    for _ in 0..n {
        let amps: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
        for t in 0..m {
            for q in 0..p {
                let (z, x) = ((q / nx) as f64 / nz as f64, (q % nx) as f64 / nx as f64);
                let tt = t as f64 / m as f64;
                let smooth: f64 = amps
                    .iter()
                    .enumerate()
                    .map(|(k, a)| {
                        let k = (k + 1) as f64;
                        a * (pi * k * x).cos() * (pi * k * z).cos() * (2.0 * pi * k * tt).sin()
                    })
                    .sum();
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push(6.0 + z + smooth + 0.1 * noise);
            }
        }
    }
    VelocityEnsemble::new(data, grid, n, m).expect("valid fixture")
}
