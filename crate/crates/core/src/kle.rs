//! Karhunen-Loeve expansion of each spatial-stochastic mode.
//!
//! For one mode `a` (`n` realizations by `P` grid points) the realization
//! mean is removed, the spatial covariance `R = (1/d) sum_k alpha_k alpha_k^T`
//! is formed (`d = n` or `n - 1`), and the integral eigenproblem
//! `sum_q R(p, q) X(q) w_q = lambda X(p)` is solved. Spatial functions are
//! orthonormal under `<f, g>_X = sum_p w_p f(p) g(p)`.
//!
//! The Galerkin form with a basis `H` (columns are basis functions sampled
//! on the grid) is `A D = B D Lambda` with `A = H^T W R W H` and
//! `B = H^T W H`. The default pixel basis has `H = I`, so `B = W` is
//! diagonal and the problem reduces to the symmetric matrix
//! `W^{1/2} R W^{1/2}`. When `n < P` the same spectrum is obtained from the
//! `n x n` weighted Gram matrix of the realizations, which keeps the solve
//! cheap for large grids.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

use crate::bd::{SpatialStochasticMode, Truncation};
use crate::linalg::{self, fix_sign, EigenPairs};

/// Grid sizes above which the dense reference solve is not used by default.
pub const DENSE_LIMIT: usize = 2000;

#[derive(Debug, Error, PartialEq)]
pub enum KleError {
    #[error("need at least 2 realizations, got {0}")]
    TooFewRealizations(usize),
    #[error("mode is not centered: column mean {mean:e} at point {point}")]
    NotCentered { point: usize, mean: f64 },
    #[error("quadrature weight matrix is singular or not positive definite")]
    SingularWeightMatrix,
    #[error("term {term} has eigenvalue {value:e}, below the zero threshold")]
    ZeroEigenvalue { term: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Divisor used by the sample covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceEstimator {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n - 1`.
    Unbiased,
}

impl CovarianceEstimator {
    pub fn divisor(self, n: usize) -> f64 {
        match self {
            Self::Population => n as f64,
            Self::Unbiased => (n - 1) as f64,
        }
    }
}

/// Splits a mode into its realization mean and the centered remainder.
pub fn center_mode(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>), KleError> {
    let n = a.nrows();
    if n < 2 {
        return Err(KleError::TooFewRealizations(n));
    }
    let abar: Vec<f64> = a.row_mean().iter().copied().collect();
    let mut alpha = a.clone();
    for mut row in alpha.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(&abar) {
            *v -= m;
        }
    }
    Ok((abar, alpha))
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceRepr {
    /// Materialized `P x P` kernel.
    Dense(DMatrix<f64>),
    /// `R = alpha^T alpha / divisor`, kept in factored form.
    Samples { alpha: DMatrix<f64>, divisor: f64 },
}

/// Spatial covariance kernel with its quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCovariance {
    pub repr: CovarianceRepr,
    pub weights: Vec<f64>,
}

fn check_centered(alpha: &DMatrix<f64>) -> Result<(), KleError> {
    let scale = alpha.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    for (point, col) in alpha.column_iter().enumerate() {
        let mean = col.mean();
        if mean.abs() > tol {
            return Err(KleError::NotCentered { point, mean });
        }
    }
    Ok(())
}

impl SpatialCovariance {
    /// Keeps the centered samples; `R` is never materialized.
    pub fn factored(
        alpha: DMatrix<f64>,
        weights: Vec<f64>,
        estimator: CovarianceEstimator,
    ) -> Result<Self, KleError> {
        check_centered(&alpha)?;
        if weights.len() != alpha.ncols() {
            return Err(KleError::ShapeMismatch(format!(
                "{} weights for {} points",
                weights.len(),
                alpha.ncols()
            )));
        }
        let divisor = estimator.divisor(alpha.nrows());
        Ok(Self {
            repr: CovarianceRepr::Samples { alpha, divisor },
            weights,
        })
    }

    /// Direct outer-product accumulation of the sample covariance.
    pub fn direct(
        alpha: &DMatrix<f64>,
        weights: Vec<f64>,
        estimator: CovarianceEstimator,
    ) -> Result<Self, KleError> {
        let f = Self::factored(alpha.clone(), weights, estimator)?;
        Ok(Self {
            repr: CovarianceRepr::Dense(f.dense()),
            weights: f.weights,
        })
    }

    /// Covariance of a field that is circularly stationary along the
    /// along-wind axis, computed with FFT cross-correlations. `alpha` rows
    /// are realizations laid out `nz x nx`. Entry `((z1, x1), (z2, x2))` is
    /// the realization-averaged circular cross-correlation of levels `z1`
    /// and `z2` at lag `x2 - x1`.
    pub fn fft(
        alpha: &DMatrix<f64>,
        nz: usize,
        nx: usize,
        weights: Vec<f64>,
        estimator: CovarianceEstimator,
    ) -> Result<Self, KleError> {
        check_centered(alpha)?;
        let p = nz * nx;
        if alpha.ncols() != p || weights.len() != p {
            return Err(KleError::ShapeMismatch(format!(
                "grid {nz} x {nx} does not match {} points",
                alpha.ncols()
            )));
        }
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(nx);
        let inverse = planner.plan_fft_inverse(nx);
        // cross[z1 * nz + z2][freq]
        let mut cross = vec![vec![Complex::new(0.0, 0.0); nx]; nz * nz];
        let mut spectra = vec![vec![Complex::new(0.0, 0.0); nx]; nz];
        for row in alpha.row_iter() {
            for (z, spec) in spectra.iter_mut().enumerate() {
                for (x, c) in spec.iter_mut().enumerate() {
                    *c = Complex::new(row[z * nx + x], 0.0);
                }
                forward.process(spec);
            }
            for z1 in 0..nz {
                for z2 in 0..nz {
                    let acc = &mut cross[z1 * nz + z2];
                    for ((c, a), b) in acc.iter_mut().zip(&spectra[z1]).zip(&spectra[z2]) {
                        *c += a.conj() * b;
                    }
                }
            }
        }
        let scale = 1.0 / (estimator.divisor(alpha.nrows()) * (nx * nx) as f64);
        let mut r = DMatrix::zeros(p, p);
        for z1 in 0..nz {
            for z2 in 0..nz {
                let lagged = &mut cross[z1 * nz + z2];
                inverse.process(lagged);
                for x1 in 0..nx {
                    for x2 in 0..nx {
                        let lag = (x2 + nx - x1) % nx;
                        r[(z1 * nx + x1, z2 * nx + x2)] = lagged[lag].re * scale;
                    }
                }
            }
        }
        Ok(Self {
            repr: CovarianceRepr::Dense(r),
            weights,
        })
    }

    pub fn points(&self) -> usize {
        self.weights.len()
    }

    /// The `P x P` kernel.
    pub fn dense(&self) -> DMatrix<f64> {
        match &self.repr {
            CovarianceRepr::Dense(r) => r.clone(),
            CovarianceRepr::Samples { alpha, divisor } => {
                let r = alpha.transpose() * alpha / *divisor;
                (&r + r.transpose()) * 0.5
            }
        }
    }

    /// `sum_p w_p R(p, p)`, which equals the sum of all eigenvalues.
    pub fn weighted_trace(&self) -> f64 {
        match &self.repr {
            CovarianceRepr::Dense(r) => (0..r.nrows()).map(|p| r[(p, p)] * self.weights[p]).sum(),
            CovarianceRepr::Samples { alpha, divisor } => {
                alpha
                    .row_iter()
                    .map(|row| {
                        row.iter()
                            .zip(&self.weights)
                            .map(|(v, w)| v * v * w)
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    / divisor
            }
        }
    }
}

/// Convenience wrapper for the default direct estimator.
pub fn spatial_covariance(
    alpha: &DMatrix<f64>,
    weights: Vec<f64>,
    estimator: CovarianceEstimator,
) -> Result<SpatialCovariance, KleError> {
    SpatialCovariance::direct(alpha, weights, estimator)
}

/// Trial basis for the Galerkin solve.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Basis {
    /// One indicator function per grid point.
    #[default]
    Pixel,
    /// `P x Nb` matrix of basis functions sampled on the grid.
    Custom(DMatrix<f64>),
}

/// Solver path for the pixel basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenMethod {
    /// Realization Gram matrix when it is smaller than the grid, dense otherwise.
    #[default]
    Auto,
    /// Symmetric `W^{1/2} R W^{1/2}` solve on the full grid.
    Dense,
    /// `n x n` weighted Gram matrix of the realizations.
    Snapshot,
}

/// Spatial eigenvalues (descending, clamped) and `W`-orthonormal functions.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialEigen {
    pub lambda: Vec<f64>,
    /// `P x K`, one spatial function per column.
    pub x: DMatrix<f64>,
}

fn check_weights(weights: &[f64]) -> Result<(), KleError> {
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(KleError::SingularWeightMatrix);
    }
    Ok(())
}

/// Solves the spatial eigenproblem for `cov` in the given basis.
pub fn solve_spatial_eigen(
    cov: &SpatialCovariance,
    basis: &Basis,
    method: EigenMethod,
) -> Result<SpatialEigen, KleError> {
    check_weights(&cov.weights)?;
    let p = cov.points();
    let mut out = match basis {
        Basis::Custom(h) => {
            if h.nrows() != p {
                return Err(KleError::ShapeMismatch(format!(
                    "basis has {} rows for {p} points",
                    h.nrows()
                )));
            }
            let w = DMatrix::from_diagonal(&DVector::from_column_slice(&cov.weights));
            let wh = &w * h;
            let b = h.transpose() * &wh;
            let a = wh.transpose() * cov.dense() * &wh;
            let pairs = linalg::generalized_symmetric_eigen(&a, &b)
                .ok_or(KleError::SingularWeightMatrix)?;
            let mut x = h * pairs.vectors;
            for mut col in x.column_iter_mut() {
                let mut v: Vec<f64> = col.iter().copied().collect();
                fix_sign(&mut v);
                col.copy_from_slice(&v);
            }
            SpatialEigen {
                lambda: pairs.values,
                x,
            }
        }
        Basis::Pixel => {
            let use_snapshot = match (method, &cov.repr) {
                (EigenMethod::Dense, _) => false,
                (EigenMethod::Snapshot, CovarianceRepr::Samples { .. }) => true,
                (EigenMethod::Snapshot, CovarianceRepr::Dense(_)) => false,
                (EigenMethod::Auto, CovarianceRepr::Samples { alpha, .. }) => {
                    alpha.nrows() < p || p > DENSE_LIMIT
                }
                (EigenMethod::Auto, CovarianceRepr::Dense(_)) => false,
            };
            match (&cov.repr, use_snapshot) {
                (CovarianceRepr::Samples { alpha, divisor }, true) => {
                    snapshot_solve(alpha, *divisor, &cov.weights)
                }
                _ => pixel_dense_solve(&cov.dense(), &cov.weights),
            }
        }
    };
    linalg::clamp_spectrum(&mut out.lambda);
    Ok(out)
}

fn pixel_dense_solve(r: &DMatrix<f64>, weights: &[f64]) -> SpatialEigen {
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let p = weights.len();
    let mut s = r.clone();
    for i in 0..p {
        for j in 0..p {
            s[(i, j)] *= sqrt_w[i] * sqrt_w[j];
        }
    }
    let EigenPairs { values, vectors } = linalg::symmetric_eigen(&s);
    let mut x = vectors;
    for mut col in x.column_iter_mut() {
        let mut v: Vec<f64> = col.iter().zip(&sqrt_w).map(|(y, sw)| y / sw).collect();
        fix_sign(&mut v);
        col.copy_from_slice(&v);
    }
    SpatialEigen { lambda: values, x }
}

fn snapshot_solve(alpha: &DMatrix<f64>, divisor: f64, weights: &[f64]) -> SpatialEigen {
    let mut weighted = alpha.clone();
    for mut row in weighted.row_iter_mut() {
        for (v, w) in row.iter_mut().zip(weights) {
            *v *= w;
        }
    }
    let gram = (alpha * weighted.transpose()) / divisor;
    let EigenPairs { values, vectors } = linalg::symmetric_eigen(&gram);
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let keep = values
        .iter()
        .take_while(|&&v| v > linalg::ZERO_EIGENVALUE_TOLERANCE * top && v > 0.0)
        .count();
    let p = alpha.ncols();
    let mut x = DMatrix::zeros(p, keep);
    for (j, value) in values.iter().take(keep).enumerate() {
        let v = vectors.column(j);
        let mut col: Vec<f64> = (alpha.transpose() * v)
            .iter()
            .map(|c| c / (divisor * value).sqrt())
            .collect();
        fix_sign(&mut col);
        x.set_column(j, &DVector::from_vec(col));
    }
    let mut lambda = values;
    lambda.truncate(keep);
    SpatialEigen { lambda, x }
}

/// `xi[j, k] = <alpha_k, X_j>_X / sqrt(lambda_j)` for the first `terms` functions.
pub fn project_xi(
    alpha: &DMatrix<f64>,
    eigen: &SpatialEigen,
    weights: &[f64],
    terms: usize,
) -> Result<DMatrix<f64>, KleError> {
    if terms > eigen.x.ncols() {
        return Err(KleError::ZeroEigenvalue {
            term: eigen.x.ncols(),
            value: 0.0,
        });
    }
    for j in 0..terms {
        let value = eigen.lambda.get(j).copied().unwrap_or(0.0);
        if value <= 0.0 {
            return Err(KleError::ZeroEigenvalue { term: j, value });
        }
    }
    let n = alpha.nrows();
    let mut xi = DMatrix::zeros(terms, n);
    for j in 0..terms {
        let wx: Vec<f64> = eigen
            .x
            .column(j)
            .iter()
            .zip(weights)
            .map(|(x, w)| x * w)
            .collect();
        let wx = DVector::from_vec(wx);
        let inv = 1.0 / eigen.lambda[j].sqrt();
        for k in 0..n {
            xi[(j, k)] = alpha.row(k).transpose().dot(&wx) * inv;
        }
    }
    Ok(xi)
}

/// Smallest `N` reaching `threshold` of a mode's spatial energy.
pub fn kle_truncation(lambda: &[f64], threshold: f64) -> usize {
    linalg::energy_truncation(lambda, threshold)
}

/// KLE settings shared by every mode.
#[derive(Debug, Clone, PartialEq)]
pub struct KleConfig {
    pub truncation: Truncation,
    pub estimator: CovarianceEstimator,
    pub method: EigenMethod,
    pub basis: Basis,
}

impl Default for KleConfig {
    fn default() -> Self {
        Self {
            truncation: Truncation::Energy(0.9),
            estimator: CovarianceEstimator::Population,
            method: EigenMethod::Auto,
            basis: Basis::Pixel,
        }
    }
}

/// Expansion of one spatial-stochastic mode.
#[derive(Debug, Clone, PartialEq)]
pub struct KleMode {
    /// Realization mean, length `P`.
    pub abar: Vec<f64>,
    /// Nonzero spectrum, descending.
    pub lambda: Vec<f64>,
    /// Retained functions, `P x N`.
    pub x: DMatrix<f64>,
    /// `N x n_realizations` observations.
    pub xi: DMatrix<f64>,
}

impl KleMode {
    pub fn terms(&self) -> usize {
        self.x.ncols()
    }

    /// Fraction of the mode's spatial energy held by the retained terms.
    pub fn retained_energy(&self) -> f64 {
        let total: f64 = self.lambda.iter().sum();
        if total == 0.0 {
            return 1.0;
        }
        self.lambda[..self.terms()].iter().sum::<f64>() / total
    }
}

/// Stage-2 result, one entry per retained temporal mode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KleModel {
    pub modes: Vec<KleMode>,
}

/// Largest absolute sample correlation between ξ observations belonging to
/// different temporal modes. Synthesis draws them independently, so this
/// measures what that choice ignores. Zero when fewer than two modes exist.
pub fn cross_mode_correlation(model: &KleModel) -> f64 {
    let rows: Vec<Vec<f64>> = model
        .modes
        .iter()
        .enumerate()
        .flat_map(|(i, m)| m.xi.row_iter().map(move |r| (i, r)))
        .map(|(i, r)| {
            let mut v: Vec<f64> = r.iter().copied().collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|x| *x -= mean);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut()
                .for_each(|x| *x /= if norm > 0.0 { norm } else { 1.0 });
            v.insert(0, i as f64);
            v
        })
        .collect();
    let mut worst = 0.0_f64;
    for (a, ra) in rows.iter().enumerate() {
        for rb in &rows[a + 1..] {
            if ra[0] != rb[0] {
                let c: f64 = ra[1..].iter().zip(&rb[1..]).map(|(x, y)| x * y).sum();
                worst = worst.max(c.abs());
            }
        }
    }
    worst
}

/// Centers, builds the covariance, solves and projects one mode.
pub fn decompose_mode(
    a: &DMatrix<f64>,
    weights: &[f64],
    config: &KleConfig,
) -> Result<KleMode, KleError> {
    let (abar, alpha) = center_mode(a)?;
    let cov = SpatialCovariance::factored(alpha, weights.to_vec(), config.estimator)?;
    let mut eigen = solve_spatial_eigen(&cov, &config.basis, config.method)?;
    let nonzero = linalg::nonzero_count(&eigen.lambda);
    eigen.lambda.truncate(nonzero);
    let terms = config.truncation.select(&eigen.lambda);
    let CovarianceRepr::Samples { alpha, .. } = cov.repr else {
        unreachable!("factored covariance")
    };
    let xi = project_xi(&alpha, &eigen, weights, terms)?;
    let x = eigen.x.columns(0, terms).into_owned();
    Ok(KleMode {
        abar,
        lambda: eigen.lambda,
        x,
        xi,
    })
}

/// Expands every spatial-stochastic mode. Modes are independent and solved
/// in parallel; results do not depend on the thread count.
pub fn decompose(
    modes: &[SpatialStochasticMode],
    weights: &[f64],
    config: &KleConfig,
) -> Result<KleModel, KleError> {
    let modes = modes
        .par_iter()
        .map(|m| decompose_mode(&m.a, weights, config))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(KleModel { modes })
}

/// Relative squared error of the `terms`-term expansion of `alpha`,
/// measured in the weighted norm summed over realizations.
pub fn reconstruction_error(
    alpha: &DMatrix<f64>,
    eigen: &SpatialEigen,
    weights: &[f64],
    terms: usize,
) -> Result<f64, KleError> {
    let xi = project_xi(alpha, eigen, weights, terms)?;
    let mut err = 0.0;
    let mut total = 0.0;
    for k in 0..alpha.nrows() {
        let mut approx = DVector::zeros(alpha.ncols());
        for j in 0..terms {
            approx += eigen.x.column(j) * (eigen.lambda[j].sqrt() * xi[(j, k)]);
        }
        for p in 0..alpha.ncols() {
            let d = alpha[(k, p)] - approx[p];
            err += weights[p] * d * d;
            total += weights[p] * alpha[(k, p)] * alpha[(k, p)];
        }
    }
    Ok(if total == 0.0 { 0.0 } else { err / total })
}
