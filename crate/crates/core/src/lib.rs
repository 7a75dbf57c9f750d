//! Stochastic reduced-order model of tower wind fields.
//!
//! Measured days are turned into snapshot ensembles, split into temporal and
//! spatial-stochastic modes, expanded into scalar random variables with
//! kernel density estimates, and resampled into synthetic days.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bd;
pub mod config;
pub mod density;
pub mod diagnostics;
pub mod ingest;
pub mod kle;
pub mod linalg;
pub mod model_file;
pub mod pipeline;
pub mod synth;

pub use bd::{BdModel, InnerProduct, Truncation};
pub use config::PipelineConfig;
pub use density::{BandwidthRule, KdeModel};
pub use diagnostics::{CoherenceReport, SpectrumReport, WelchConfig};
pub use ingest::{LevelSeries, SnapshotGrid, TowerSeries, VelocityEnsemble};
pub use kle::{KleConfig, KleModel};
pub use model_file::{ModelFile, ModelFileError};
pub use pipeline::{Decomposition, PipelineError};
pub use synth::ReducedModel;
