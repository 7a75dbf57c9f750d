//! The assembled low-complexity model and synthetic realizations.
//!
//! A realization is
//! `v(x, t) = vbar(x) + sum_i a_i(x) T_i(t)` with
//! `a_i(x) = abar_i(x) + sum_j sqrt(lambda_ij) xi_ij X_ij(x)`,
//! where each `xi_ij` is drawn independently from its KDE.
//!
//! # Seeds
//!
//! Streams are derived with the SplitMix64 finalizer:
//! `derive_seed(seed, index) = splitmix64(seed ^ splitmix64(index))`.
//! Realization `r` of an ensemble uses `derive_seed(master, r)`; within a
//! realization, expansion term `q` (terms numbered mode by mode) draws from a
//! ChaCha8 generator seeded with `derive_seed(realization_seed, q)`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bd::{BdModel, InnerProduct};
use crate::density::{BandwidthRule, DensityError, KdeModel};
use crate::ingest::{SnapshotGrid, VelocityEnsemble};
use crate::kle::KleModel;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Density(#[from] DensityError),
}

/// SplitMix64 output function applied to `x + golden gamma`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

/// KLE factors of one temporal mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeBundle {
    pub abar: Vec<f64>,
    /// Nonzero spatial spectrum of the mode, descending.
    pub lambda: Vec<f64>,
    /// Retained spatial functions, `P x N`.
    pub x: DMatrix<f64>,
    /// One density per retained term.
    pub kdes: Vec<KdeModel>,
}

impl ModeBundle {
    pub fn terms(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    /// SHA-256 of the source ensemble values.
    pub source_hash: [u8; 32],
    /// Flat `key=value` echo of the configuration.
    pub config: String,
}

/// Everything needed to synthesize realizations without the source data.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel {
    pub grid: SnapshotGrid,
    pub n_intervals: usize,
    pub n_training: usize,
    pub inner_product: InnerProduct,
    pub vbar: Vec<f64>,
    /// Full temporal spectrum, descending.
    pub mu: Vec<f64>,
    /// Retained temporal modes.
    pub temporal: Vec<Vec<f64>>,
    pub modes: Vec<ModeBundle>,
    pub provenance: Provenance,
}

impl ReducedModel {
    pub fn retained_modes(&self) -> usize {
        self.temporal.len()
    }

    pub fn terms_per_mode(&self) -> Vec<usize> {
        self.modes.iter().map(ModeBundle::terms).collect()
    }

    pub fn stochastic_terms(&self) -> usize {
        self.terms_per_mode().iter().sum()
    }

    pub fn energy_fractions(&self) -> Vec<f64> {
        let total: f64 = self.mu.iter().sum();
        self.mu
            .iter()
            .map(|v| if total > 0.0 { v / total } else { 0.0 })
            .collect()
    }

    /// The projected training values of every term for realization `k`.
    pub fn training_xi(&self, k: usize) -> Vec<Vec<f64>> {
        self.modes
            .iter()
            .map(|m| m.kdes.iter().map(|kde| kde.observations()[k]).collect())
            .collect()
    }

    /// The realization obtained with all `xi` at their KDE means.
    pub fn mean_xi(&self) -> Vec<Vec<f64>> {
        self.modes
            .iter()
            .map(|m| m.kdes.iter().map(KdeModel::mean).collect())
            .collect()
    }
}

/// Fits one KDE per retained term of every mode.
pub fn fit_kdes(kle: &KleModel, rule: BandwidthRule) -> Result<Vec<Vec<KdeModel>>, DensityError> {
    kle.modes
        .iter()
        .map(|mode| {
            mode.xi
                .row_iter()
                .map(|row| KdeModel::fit(row.iter().copied().collect(), rule))
                .collect()
        })
        .collect()
}

/// Packages the stage results into a [`ReducedModel`].
pub fn build_model(
    bd: &BdModel,
    kle: &KleModel,
    kdes: Vec<Vec<KdeModel>>,
    grid: &SnapshotGrid,
    vbar: &[f64],
) -> Result<ReducedModel, SynthError> {
    let p = grid.points();
    let mismatch = |msg: String| Err(SynthError::ShapeMismatch(msg));
    if vbar.len() != p {
        return mismatch(format!(
            "mean field has {} points, grid has {p}",
            vbar.len()
        ));
    }
    let m = bd.retained();
    if kle.modes.len() != m || kdes.len() != m {
        return mismatch(format!(
            "{m} temporal modes, {} KLE modes, {} KDE sets",
            kle.modes.len(),
            kdes.len()
        ));
    }
    let n_intervals = bd.temporal.first().map_or(0, Vec::len);
    let n_training = bd.modes.first().map_or(0, |a| a.a.nrows());
    let mut modes = Vec::with_capacity(m);
    for (i, (mode, kde_set)) in kle.modes.iter().zip(kdes).enumerate() {
        if mode.abar.len() != p || mode.x.nrows() != p {
            return mismatch(format!("mode {i} spatial functions do not match the grid"));
        }
        if kde_set.len() != mode.terms() {
            return mismatch(format!(
                "mode {i} has {} terms and {} densities",
                mode.terms(),
                kde_set.len()
            ));
        }
        modes.push(ModeBundle {
            abar: mode.abar.clone(),
            lambda: mode.lambda.clone(),
            x: mode.x.clone(),
            kdes: kde_set,
        });
    }
    Ok(ReducedModel {
        grid: grid.clone(),
        n_intervals,
        n_training,
        inner_product: bd.inner_product,
        vbar: vbar.to_vec(),
        mu: bd.mu.clone(),
        temporal: bd.temporal.clone(),
        modes,
        provenance: Provenance::default(),
    })
}

/// Writes the realization for given `xi` values into `out` (`n_intervals x P`).
fn realize_into(model: &ReducedModel, xi: &[Vec<f64>], out: &mut [f64]) {
    let p = model.grid.points();
    let spatial: Vec<Vec<f64>> = model
        .modes
        .iter()
        .zip(xi)
        .map(|(mode, xs)| {
            let mut a = mode.abar.clone();
            for (j, &x) in xs.iter().enumerate() {
                let c = mode.lambda[j].sqrt() * x;
                for (av, xv) in a.iter_mut().zip(mode.x.column(j).iter()) {
                    *av += c * xv;
                }
            }
            a
        })
        .collect();
    for (t, snap) in out.chunks_exact_mut(p).enumerate() {
        snap.copy_from_slice(&model.vbar);
        for (a, t_mode) in spatial.iter().zip(&model.temporal) {
            let tv = t_mode[t];
            for (s, av) in snap.iter_mut().zip(a) {
                *s += av * tv;
            }
        }
    }
}

/// A realization for prescribed `xi[i][j]`.
pub fn realize(model: &ReducedModel, xi: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; model.n_intervals * model.grid.points()];
    realize_into(model, xi, &mut out);
    out
}

/// Draws every `xi` for one realization.
pub fn draw_xi(model: &ReducedModel, seed: u64) -> Vec<Vec<f64>> {
    let mut q = 0u64;
    model
        .modes
        .iter()
        .map(|mode| {
            mode.kdes
                .iter()
                .map(|kde| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, q));
                    q += 1;
                    kde.sample_with(&mut rng, 1)[0]
                })
                .collect()
        })
        .collect()
}

/// One synthetic day, `n_intervals x nz x nx`.
pub fn generate_realization(model: &ReducedModel, seed: u64) -> Vec<f64> {
    realize(model, &draw_xi(model, seed))
}

/// `n` realizations seeded from `seed`. Realizations are generated in
/// parallel and do not depend on the thread count.
pub fn generate_ensemble(model: &ReducedModel, n: usize, seed: u64) -> VelocityEnsemble {
    let len = model.n_intervals * model.grid.points();
    let mut data = vec![0.0; n * len];
    if len > 0 {
        data.par_chunks_mut(len).enumerate().for_each(|(r, out)| {
            let xi = draw_xi(model, derive_seed(seed, r as u64));
            realize_into(model, &xi, out);
        });
    }
    ensemble_from(model, data, n)
}

/// Reconstructs training realizations from their projected `xi` values.
pub fn reconstruct_training(model: &ReducedModel) -> VelocityEnsemble {
    let len = model.n_intervals * model.grid.points();
    let n = model.n_training;
    let mut data = vec![0.0; n * len];
    if len > 0 {
        data.par_chunks_mut(len).enumerate().for_each(|(k, out)| {
            realize_into(model, &model.training_xi(k), out);
        });
    }
    ensemble_from(model, data, n)
}

fn ensemble_from(model: &ReducedModel, data: Vec<f64>, n: usize) -> VelocityEnsemble {
    VelocityEnsemble {
        data,
        grid: model.grid.clone(),
        n_realizations: n,
        n_intervals: model.n_intervals,
        snapshot_dx: vec![model.grid.dx; n * model.n_intervals],
    }
}
