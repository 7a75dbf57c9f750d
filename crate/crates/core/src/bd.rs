//! Bi-orthogonal decomposition: temporal modes and spatial-stochastic modes.
//!
//! Discrete conventions, with `n` realizations, `m` intervals and `P` grid
//! points per snapshot:
//!
//! * temporal inner product `<f, g>_T = dt * sum_t f[t] g[t]`, `dt = interval_s`;
//! * spatial weight `w = dz * dx` per grid point;
//! * `C(t, t')` is built from the fluctuations under one of three
//!   space-stochastic inner products (see [`InnerProduct`]);
//! * the temporal eigenproblem is the symmetric problem of `C * dt`, with
//!   modes scaled to unit `<., .>_T` norm.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::ingest::{SnapshotGrid, VelocityEnsemble};
use crate::linalg::{self, asymmetry, max_abs, EigenPairs};

/// Relative tolerance for symmetry and semi-definiteness checks.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum BdError {
    #[error(
        "temporal covariance is not symmetric (max |C - C^T| = {asymmetry:e}, max |C| = {scale:e})"
    )]
    NotSymmetric { asymmetry: f64, scale: f64 },
    #[error(
        "temporal covariance is indefinite: smallest eigenvalue {smallest:e}, largest {largest:e}"
    )]
    IndefiniteBeyondTolerance { smallest: f64, largest: f64 },
    #[error("mode {mode} has eigenvalue {value:e}, below the zero threshold")]
    ZeroEigenvalue { mode: usize, value: f64 },
    #[error("requested {requested} modes but only {available} exist")]
    TooManyModes { requested: usize, available: usize },
}

/// How the spatial-stochastic average is taken when forming `C(t, t')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InnerProduct {
    /// Spatial integral of the product of ensemble means.
    #[default]
    MeanProduct = 0,
    /// Ensemble mean of the spatial integral of the product.
    SecondMoment = 1,
    /// `SecondMoment - MeanProduct`.
    Covariance = 2,
}

impl InnerProduct {
    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(Self::MeanProduct),
            1 => Some(Self::SecondMoment),
            2 => Some(Self::Covariance),
            _ => None,
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }
}

/// Time-and-ensemble mean of the velocity, `nz x nx`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanField {
    pub vbar: Vec<f64>,
}

/// Velocity with the mean field removed. Same layout as [`VelocityEnsemble`].
#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationEnsemble {
    pub u: Vec<f64>,
    pub mean: MeanField,
    pub grid: SnapshotGrid,
    pub n_realizations: usize,
    pub n_intervals: usize,
}

impl FluctuationEnsemble {
    pub fn points(&self) -> usize {
        self.grid.points()
    }

    /// Realization `k` as an `n_intervals x P` matrix view source.
    pub fn realization(&self, k: usize) -> &[f64] {
        let len = self.n_intervals * self.points();
        &self.u[k * len..(k + 1) * len]
    }

    /// Ensemble mean over realizations, `n_intervals x P` row-major.
    pub fn ensemble_mean(&self) -> Vec<f64> {
        let len = self.n_intervals * self.points();
        let mut out = vec![0.0; len];
        for k in 0..self.n_realizations {
            for (o, v) in out.iter_mut().zip(self.realization(k)) {
                *o += v;
            }
        }
        let inv = 1.0 / self.n_realizations as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }
}

/// Removes the mean field: average over realizations, then over time.
pub fn remove_mean(ensemble: VelocityEnsemble) -> FluctuationEnsemble {
    let p = ensemble.points();
    let n = ensemble.n_realizations;
    let m = ensemble.n_intervals;
    // realization mean per (interval, point), then time mean
    let mut per_interval = vec![0.0; m * p];
    for k in 0..n {
        for (acc, v) in per_interval.iter_mut().zip(ensemble.realization(k)) {
            *acc += v;
        }
    }
    let mut vbar = vec![0.0; p];
    for t in 0..m {
        for (acc, v) in vbar.iter_mut().zip(&per_interval[t * p..(t + 1) * p]) {
            *acc += v / n as f64;
        }
    }
    vbar.iter_mut().for_each(|v| *v /= m as f64);

    let mut u = ensemble.data;
    for snap in u.chunks_exact_mut(p) {
        for (x, mean) in snap.iter_mut().zip(&vbar) {
            *x -= mean;
        }
    }
    FluctuationEnsemble {
        u,
        mean: MeanField { vbar },
        grid: ensemble.grid,
        n_realizations: n,
        n_intervals: m,
    }
}

/// `C(t, t')` together with the quadrature used to build it.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalCovariance {
    pub c: DMatrix<f64>,
    pub inner_product: InnerProduct,
    /// Temporal quadrature weight, s.
    pub dt: f64,
    /// Spatial quadrature weight per point, m^2.
    pub dx_weight: f64,
}

fn gram_rows(rows: &DMatrix<f64>) -> DMatrix<f64> {
    rows * rows.transpose()
}

fn realization_matrix(fluct: &FluctuationEnsemble, k: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(fluct.n_intervals, fluct.points(), fluct.realization(k))
}

/// Builds `C(t, t')` under the selected inner product.
pub fn temporal_covariance(fluct: &FluctuationEnsemble, kind: InnerProduct) -> TemporalCovariance {
    let m = fluct.n_intervals;
    let w = fluct.grid.cell_weight();
    let mean_product = || {
        let ubar = DMatrix::from_row_slice(m, fluct.points(), &fluct.ensemble_mean());
        gram_rows(&ubar)
    };
    let second_moment = || {
        let mut acc = DMatrix::zeros(m, m);
        for k in 0..fluct.n_realizations {
            acc += gram_rows(&realization_matrix(fluct, k));
        }
        acc / fluct.n_realizations as f64
    };
    let raw = match kind {
        InnerProduct::MeanProduct => mean_product(),
        InnerProduct::SecondMoment => second_moment(),
        InnerProduct::Covariance => second_moment() - mean_product(),
    };
    let c = (&raw + raw.transpose()) * (0.5 * w);
    TemporalCovariance {
        c,
        inner_product: kind,
        dt: fluct.grid.interval_s,
        dx_weight: w,
    }
}

/// Temporal eigenvalues (full spectrum, descending, clamped at zero) and modes.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalModes {
    pub mu: Vec<f64>,
    /// `m x m`, column `i` is `T_i` with `<T_i, T_i>_T = 1`.
    pub modes: DMatrix<f64>,
    pub dt: f64,
}

impl TemporalModes {
    pub fn mode(&self, i: usize) -> Vec<f64> {
        self.modes.column(i).iter().copied().collect()
    }
}

/// Solves `mu T(t) = sum_t' C(t, t') T(t') dt`.
pub fn eigendecompose_temporal(cov: &TemporalCovariance) -> Result<TemporalModes, BdError> {
    let scale = max_abs(&cov.c);
    let asym = asymmetry(&cov.c);
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(BdError::NotSymmetric {
            asymmetry: asym,
            scale,
        });
    }
    let EigenPairs {
        mut values,
        vectors,
    } = linalg::symmetric_eigen(&(&cov.c * cov.dt));
    let largest = values.first().copied().unwrap_or(0.0);
    let smallest = values.last().copied().unwrap_or(0.0);
    if smallest < -SYMMETRY_TOLERANCE * largest.abs() {
        return Err(BdError::IndefiniteBeyondTolerance { smallest, largest });
    }
    linalg::clamp_spectrum(&mut values);
    let modes = vectors / cov.dt.sqrt();
    Ok(TemporalModes {
        mu: values,
        modes,
        dt: cov.dt,
    })
}

/// `a_i` for one temporal mode: `n_realizations x P` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialStochasticMode {
    pub a: DMatrix<f64>,
}

/// `a_i(x, k) = <u_k(x, .), T_i>_T` for the first `count` modes.
pub fn spatial_stochastic_modes(
    fluct: &FluctuationEnsemble,
    temporal: &TemporalModes,
    count: usize,
) -> Result<Vec<SpatialStochasticMode>, BdError> {
    let m = fluct.n_intervals;
    if count > temporal.mu.len() {
        return Err(BdError::TooManyModes {
            requested: count,
            available: temporal.mu.len(),
        });
    }
    for i in 0..count {
        if temporal.mu[i] <= 0.0 {
            return Err(BdError::ZeroEigenvalue {
                mode: i,
                value: temporal.mu[i],
            });
        }
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    // count x m, scaled by dt
    let t_rows = temporal.modes.columns(0, count).transpose() * temporal.dt;
    let p = fluct.points();
    let mut out = vec![DMatrix::zeros(fluct.n_realizations, p); count];
    for k in 0..fluct.n_realizations {
        let uk = DMatrix::from_row_slice(m, p, fluct.realization(k));
        let proj = &t_rows * uk;
        for (i, a) in out.iter_mut().enumerate() {
            a.row_mut(k).copy_from(&proj.row(i));
        }
    }
    Ok(out
        .into_iter()
        .map(|a| SpatialStochasticMode { a })
        .collect())
}

/// Stage-1 result: the retained temporal modes and their spatial-stochastic
/// partners, plus the full spectrum for energy bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct BdModel {
    /// Full spectrum, descending.
    pub mu: Vec<f64>,
    /// Retained temporal modes, `M` vectors of length `n_intervals`.
    pub temporal: Vec<Vec<f64>>,
    /// `K_i = sqrt(mu_i)` for the retained modes.
    pub k: Vec<f64>,
    pub modes: Vec<SpatialStochasticMode>,
    pub energy_fractions: Vec<f64>,
    pub inner_product: InnerProduct,
    pub dt: f64,
}

impl BdModel {
    pub fn retained(&self) -> usize {
        self.temporal.len()
    }

    /// `Phi_i = a_i / K_i`.
    pub fn phi(&self, i: usize) -> DMatrix<f64> {
        &self.modes[i].a / self.k[i]
    }
}

/// How many modes to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// Smallest count reaching this energy fraction.
    Energy(f64),
    /// Exactly this many (capped at the number of nonzero eigenvalues).
    Fixed(usize),
}

impl Truncation {
    pub fn select(self, spectrum: &[f64]) -> usize {
        match self {
            Truncation::Energy(f) => linalg::energy_truncation(spectrum, f),
            Truncation::Fixed(n) => n.min(linalg::nonzero_count(spectrum)),
        }
    }
}

/// Smallest `M` reaching `threshold` of the temporal energy.
pub fn energy_truncation(mu: &[f64], threshold: f64) -> usize {
    linalg::energy_truncation(mu, threshold)
}

/// Runs the whole stage on a fluctuation ensemble.
pub fn decompose(
    fluct: &FluctuationEnsemble,
    kind: InnerProduct,
    truncation: Truncation,
) -> Result<(BdModel, TemporalCovariance), BdError> {
    let cov = temporal_covariance(fluct, kind);
    let temporal = eigendecompose_temporal(&cov)?;
    let m = truncation.select(&temporal.mu);
    let modes = spatial_stochastic_modes(fluct, &temporal, m)?;
    let total: f64 = temporal.mu.iter().sum();
    let energy_fractions = temporal
        .mu
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok((
        BdModel {
            k: temporal.mu[..m].iter().map(|v| v.sqrt()).collect(),
            temporal: (0..m).map(|i| temporal.mode(i)).collect(),
            mu: temporal.mu,
            modes,
            energy_fractions,
            inner_product: kind,
            dt: temporal.dt,
        },
        cov,
    ))
}

/// Largest deviation of `<Phi_i, Phi_j>` from the identity under the model's
/// inner product. Exact for finite ensembles only under the inner product
/// the modes were built with.
pub fn weak_orthonormality_defect(bd: &BdModel, grid: &SnapshotGrid) -> f64 {
    let w = grid.cell_weight();
    let m = bd.retained();
    let phis: Vec<DMatrix<f64>> = (0..m).map(|i| bd.phi(i)).collect();
    let n = phis.first().map_or(1, |p| p.nrows()) as f64;
    let means: Vec<nalgebra::RowDVector<f64>> = phis.iter().map(|p| p.row_mean()).collect();
    let mut worst = 0.0_f64;
    for i in 0..m {
        for j in 0..m {
            let mean_product = w * means[i].dot(&means[j]);
            let second = w * phis[i].dot(&phis[j]) / n;
            let ip = match bd.inner_product {
                InnerProduct::MeanProduct => mean_product,
                InnerProduct::SecondMoment => second,
                InnerProduct::Covariance => second - mean_product,
            };
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((ip - target).abs());
        }
    }
    worst
}

/// Relative squared error of the `M`-term reconstruction, measured in the
/// time-integrated norm of the model's inner product.
pub fn reconstruction_error(fluct: &FluctuationEnsemble, bd: &BdModel, terms: usize) -> f64 {
    let m = fluct.n_intervals;
    let p = fluct.points();
    let n = fluct.n_realizations;
    let w = fluct.grid.cell_weight();
    let dt = bd.dt;
    let mut residual = fluct.u.clone();
    for k in 0..n {
        let base = k * m * p;
        for (i, t_mode) in bd.temporal.iter().enumerate().take(terms) {
            let a = bd.modes[i].a.row(k);
            for t in 0..m {
                let row = &mut residual[base + t * p..base + (t + 1) * p];
                for (r, av) in row.iter_mut().zip(a.iter()) {
                    *r -= av * t_mode[t];
                }
            }
        }
    }
    let norm = |data: &[f64]| -> f64 {
        let mut mean = vec![0.0; m * p];
        let mut second = 0.0;
        for k in 0..n {
            let chunk = &data[k * m * p..(k + 1) * m * p];
            for (acc, v) in mean.iter_mut().zip(chunk) {
                *acc += v / n as f64;
            }
            second += chunk.iter().map(|v| v * v).sum::<f64>() / n as f64;
        }
        let mean_sq: f64 = mean.iter().map(|v| v * v).sum();
        let value = match bd.inner_product {
            InnerProduct::MeanProduct => mean_sq,
            InnerProduct::SecondMoment => second,
            InnerProduct::Covariance => second - mean_sq,
        };
        value * w * dt
    };
    let total = norm(&fluct.u);
    if total == 0.0 {
        return 0.0;
    }
    norm(&residual) / total
}
