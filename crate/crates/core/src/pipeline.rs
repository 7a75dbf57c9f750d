//! End-to-end orchestration: ingest, decompose, expand, fit, synthesize.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::bd::{self, BdError, BdModel, InnerProduct, TemporalCovariance};
use crate::config::{ConfigError, PipelineConfig};
use crate::density::DensityError;
use crate::diagnostics::{self, CoherenceReport, DiagnosticsError, SpectrumReport};
use crate::ingest::{self, IngestError, LevelSeries, VelocityEnsemble};
use crate::kle::{self, KleError, KleModel};
use crate::linalg;
use crate::model_file::{self, ModelFile, ModelFileError};
use crate::synth::{self, Provenance, ReducedModel, SynthError};

/// Any failure, tagged with the stage that raised it.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("bi-orthogonal decomposition: {0}")]
    Bd(#[from] BdError),
    #[error("Karhunen-Loeve expansion: {0}")]
    Kle(#[from] KleError),
    #[error("density estimation: {0}")]
    Density(#[from] DensityError),
    #[error("synthesis: {0}")]
    Synth(#[from] SynthError),
    #[error("diagnostics: {0}")]
    Diagnostics(#[from] DiagnosticsError),
    #[error("model file: {0}")]
    ModelFile(#[from] ModelFileError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Expands directories into their `.csv` files, sorted by name.
pub fn expand_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(io_err(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Loads tower CSVs and interpolates each onto `nz` uniform levels between
/// the lowest and highest sensors.
pub fn load_days(paths: &[PathBuf], nz: usize) -> Result<Vec<LevelSeries>, PipelineError> {
    paths
        .iter()
        .map(|p| {
            let tower = ingest::load_tower_csv(p, None)?;
            let hs = &tower.sensor_heights;
            let levels = ingest::uniform_levels(hs[0], hs[hs.len() - 1], nz);
            Ok(ingest::interpolate_vertical(&tower, &levels)?)
        })
        .collect()
}

/// Cuts each day into snapshots and stacks them into one ensemble.
pub fn build_ensemble(
    days: &[LevelSeries],
    cfg: &PipelineConfig,
) -> Result<VelocityEnsemble, PipelineError> {
    let snapshots = days
        .iter()
        .map(|d| ingest::build_snapshots(d, cfg.interval_s, cfg.dx_mode))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ingest::assemble_ensemble(snapshots)?)
}

/// Reads the configured input: one ensemble file, or day CSVs.
pub fn load_input(cfg: &PipelineConfig) -> Result<VelocityEnsemble, PipelineError> {
    if cfg.input.is_empty() {
        return Err(PipelineError::Usage("no input given".into()));
    }
    if let [single] = &cfg.input[..] {
        if !single.exists() {
            return Err(PipelineError::Io {
                path: single.clone(),
                source: std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "no such file or directory",
                ),
            });
        }
        if single.is_file() && model_file::is_ensemble_file(single) {
            return Ok(model_file::read_ensemble(single)?);
        }
    }
    let files = expand_inputs(&cfg.input)?;
    let days = load_days(&files, cfg.nz)?;
    build_ensemble(&days, cfg)
}

/// Every intermediate result of a decomposition.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub model: ReducedModel,
    pub bd: BdModel,
    pub kle: KleModel,
    pub temporal_covariance: TemporalCovariance,
}

impl Decomposition {
    pub fn model_file(&self, store_covariance: bool) -> ModelFile {
        ModelFile {
            model: self.model.clone(),
            temporal_covariance: store_covariance.then(|| self.temporal_covariance.c.clone()),
        }
    }
}

/// Runs mean removal, the temporal/spatial split, the spatial expansion of
/// every retained mode and the density fits.
pub fn decompose_ensemble(
    ensemble: VelocityEnsemble,
    cfg: &PipelineConfig,
) -> Result<Decomposition, PipelineError> {
    let source_hash = model_file::ensemble_hash(&ensemble);
    let grid = ensemble.grid.clone();
    let fluct = bd::remove_mean(ensemble);
    let (bd_model, cov) = bd::decompose(&fluct, cfg.inner_product, cfg.bd_truncation())?;
    let weights = vec![grid.cell_weight(); grid.points()];
    let kle_model = kle::decompose(&bd_model.modes, &weights, &cfg.kle_config())?;
    let kdes = synth::fit_kdes(&kle_model, cfg.bandwidth)?;
    let mut model = synth::build_model(&bd_model, &kle_model, kdes, &grid, &fluct.mean.vbar)?;
    model.provenance = Provenance {
        source_hash,
        config: cfg.echo(),
    };
    Ok(Decomposition {
        model,
        bd: bd_model,
        kle: kle_model,
        temporal_covariance: cov,
    })
}

/// Temporal covariance of an ensemble around its own mean field.
pub fn ensemble_covariance(ensemble: &VelocityEnsemble, kind: InnerProduct) -> DMatrix<f64> {
    bd::temporal_covariance(&bd::remove_mean(ensemble.clone()), kind).c
}

/// What `decompose` reports.
#[derive(Debug, Clone)]
pub struct DecomposeSummary {
    pub output: PathBuf,
    pub file_size: u64,
    pub mu: Vec<f64>,
    pub retained_modes: usize,
    pub terms_per_mode: Vec<usize>,
    /// Full spatial spectrum of each retained mode.
    pub lambda: Vec<Vec<f64>>,
    /// Largest deviation of the spatial-stochastic modes from orthonormality.
    pub orthonormality_defect: f64,
    /// Largest sample correlation between ξ of different temporal modes.
    pub cross_mode_correlation: f64,
}

impl fmt::Display for DecomposeSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "temporal energy spectrum (mode, eigenvalue, cumulative fraction):"
        )?;
        for (i, (mu, c)) in self
            .mu
            .iter()
            .zip(linalg::cumulative_fractions(&self.mu))
            .enumerate()
        {
            if *mu == 0.0 {
                break;
            }
            writeln!(f, "  {:>3}  {mu:.6e}  {c:.4}", i + 1)?;
        }
        for (i, lambda) in self.lambda.iter().enumerate() {
            let cum = linalg::cumulative_fractions(lambda);
            let shown: Vec<String> = cum.iter().take(10).map(|c| format!("{c:.3}")).collect();
            writeln!(
                f,
                "mode {} spatial cumulative energy: {}",
                i + 1,
                shown.join(" ")
            )?;
        }
        writeln!(
            f,
            "retained M = {}, N = {:?} ({} stochastic terms)",
            self.retained_modes,
            self.terms_per_mode,
            self.terms_per_mode.iter().sum::<usize>()
        )?;
        writeln!(
            f,
            "weak orthonormality defect: {:.3e}",
            self.orthonormality_defect
        )?;
        writeln!(
            f,
            "largest cross-mode xi correlation: {:.3}",
            self.cross_mode_correlation
        )?;
        write!(
            f,
            "wrote {} ({} bytes)",
            self.output.display(),
            self.file_size
        )
    }
}

pub fn cmd_decompose(cfg: &PipelineConfig) -> Result<DecomposeSummary, PipelineError> {
    let output = cfg
        .output
        .clone()
        .ok_or_else(|| PipelineError::Usage("no output path given".into()))?;
    let ensemble = load_input(cfg)?;
    if let Some(path) = &cfg.ensemble_output {
        model_file::write_ensemble(path, &ensemble)?;
    }
    let d = decompose_ensemble(ensemble, cfg)?;
    let file_size = d.model_file(cfg.store_temporal_covariance).write(&output)?;
    Ok(DecomposeSummary {
        output,
        file_size,
        mu: d.model.mu.clone(),
        retained_modes: d.model.retained_modes(),
        terms_per_mode: d.model.terms_per_mode(),
        lambda: d.model.modes.iter().map(|m| m.lambda.clone()).collect(),
        orthonormality_defect: bd::weak_orthonormality_defect(&d.bd, &d.model.grid),
        cross_mode_correlation: kle::cross_mode_correlation(&d.kle),
    })
}

/// Synthetic realizations drawn from the model, or the training days
/// rebuilt from their projected values when `projected` is set.
pub fn cmd_synthesize(
    model_path: &Path,
    output: &Path,
    n: usize,
    seed: u64,
    projected: bool,
) -> Result<u64, PipelineError> {
    let file = ModelFile::read(model_path)?;
    let ensemble = if projected {
        synth::reconstruct_training(&file.model)
    } else {
        synth::generate_ensemble(&file.model, n, seed)
    };
    Ok(model_file::write_ensemble(output, &ensemble)?)
}

/// Source and synthetic comparisons.
#[derive(Debug, Clone)]
pub struct DiagnoseReport {
    pub epsilon: f64,
    pub psd_source: SpectrumReport,
    pub psd_synth: SpectrumReport,
    pub coherence_source: CoherenceReport,
    pub coherence_synth: CoherenceReport,
    pub energy_source: Vec<f64>,
    pub energy_synth: Vec<f64>,
}

fn spectrum(c: &DMatrix<f64>, dt: f64) -> Vec<f64> {
    let mut values = linalg::symmetric_eigen(&(c * dt)).values;
    linalg::clamp_spectrum(&mut values);
    values
}

/// Compares two conforming ensembles.
pub fn diagnose(
    source: &VelocityEnsemble,
    synth: &VelocityEnsemble,
    cfg: &PipelineConfig,
) -> Result<DiagnoseReport, PipelineError> {
    if !source.grid.same_shape(&synth.grid) || source.n_intervals != synth.n_intervals {
        return Err(DiagnosticsError::ShapeMismatch(format!(
            "source is {} intervals of {} x {}, synthetic is {} of {} x {}",
            source.n_intervals,
            source.grid.nz(),
            source.grid.nx,
            synth.n_intervals,
            synth.grid.nz(),
            synth.grid.nx
        ))
        .into());
    }
    let nz = source.grid.nz();
    let welch = cfg.welch();
    let level = cfg.psd_level(nz);
    let (za, zb) = cfg.coherence_levels(nz);
    let c_source = ensemble_covariance(source, cfg.inner_product);
    let c_synth = ensemble_covariance(synth, cfg.inner_product);
    let dt = source.grid.interval_s;
    Ok(DiagnoseReport {
        epsilon: diagnostics::covariance_error(&c_source, &c_synth)?,
        psd_source: diagnostics::psd_ensemble(source, level, &welch)?,
        psd_synth: diagnostics::psd_ensemble(synth, level, &welch)?,
        coherence_source: diagnostics::coherence_ensemble(source, za, zb, &welch)?,
        coherence_synth: diagnostics::coherence_ensemble(synth, za, zb, &welch)?,
        energy_source: spectrum(&c_source, dt),
        energy_synth: spectrum(&c_synth, dt),
    })
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), PipelineError> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(io_err(&path))?;
    Ok((path, BufWriter::new(f)))
}

impl DiagnoseReport {
    /// Writes `psd_*.csv`, `coherence_*.csv`, `epsilon.csv` and `energy.csv`.
    pub fn write_dir(
        &self,
        dir: &Path,
        inner_product: InnerProduct,
    ) -> Result<Vec<PathBuf>, PipelineError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut written = Vec::new();
        let mut emit = |name: &str,
                        body: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>|
         -> Result<(), PipelineError> {
            let (path, mut w) = create(dir, name)?;
            body(&mut w)
                .and_then(|_| w.flush())
                .map_err(io_err(&path))?;
            written.push(path);
            Ok(())
        };
        emit("psd_source.csv", &|w| self.psd_source.write_csv(w))?;
        emit("psd_synth.csv", &|w| self.psd_synth.write_csv(w))?;
        emit("coherence_source.csv", &|w| {
            self.coherence_source.write_csv(w)
        })?;
        emit("coherence_synth.csv", &|w| {
            self.coherence_synth.write_csv(w)
        })?;
        emit("epsilon.csv", &|w| {
            writeln!(w, "inner_product,epsilon")?;
            writeln!(w, "{},{}", inner_product.index(), self.epsilon)
        })?;
        emit("energy.csv", &|w| {
            writeln!(
                w,
                "mode,source_eigenvalue,source_cumulative,synth_eigenvalue,synth_cumulative"
            )?;
            let cs = linalg::cumulative_fractions(&self.energy_source);
            let ct = linalg::cumulative_fractions(&self.energy_synth);
            for i in 0..self.energy_source.len() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    i + 1,
                    self.energy_source[i],
                    cs[i],
                    self.energy_synth[i],
                    ct[i]
                )?;
            }
            Ok(())
        })?;
        Ok(written)
    }
}

pub fn cmd_diagnose(
    source_path: &Path,
    synth_path: &Path,
    out_dir: &Path,
    cfg: &PipelineConfig,
) -> Result<DiagnoseReport, PipelineError> {
    let source = model_file::read_ensemble(source_path)?;
    let synth = model_file::read_ensemble(synth_path)?;
    let report = diagnose(&source, &synth, cfg)?;
    report.write_dir(out_dir, cfg.inner_product)?;
    Ok(report)
}

/// Human-readable model summary.
#[derive(Debug, Clone)]
pub struct ModelInfo {
    pub file_size: u64,
    pub nz: usize,
    pub nx: usize,
    pub n_intervals: usize,
    pub n_training: usize,
    pub interval_s: f64,
    pub inner_product: InnerProduct,
    pub retained_modes: usize,
    pub terms_per_mode: Vec<usize>,
    pub energy_fractions: Vec<f64>,
    /// Size of the training ensemble stored as raw binary64 values.
    pub raw_ensemble_bytes: u64,
    pub config: String,
}

impl fmt::Display for ModelInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "grid: {} levels x {} points, {} intervals of {} s, {} training days",
            self.nz, self.nx, self.n_intervals, self.interval_s, self.n_training
        )?;
        writeln!(f, "inner product: type {}", self.inner_product.index())?;
        writeln!(f, "M = {}", self.retained_modes)?;
        for (i, n) in self.terms_per_mode.iter().enumerate() {
            writeln!(
                f,
                "  mode {}: N = {n}, energy fraction {:.4}",
                i + 1,
                self.energy_fractions[i]
            )?;
        }
        let retained: f64 = self.energy_fractions[..self.retained_modes].iter().sum();
        writeln!(f, "retained temporal energy: {retained:.4}")?;
        writeln!(
            f,
            "file size: {} bytes (raw training ensemble: {} bytes, ratio {:.1})",
            self.file_size,
            self.raw_ensemble_bytes,
            self.raw_ensemble_bytes as f64 / self.file_size.max(1) as f64
        )?;
        write!(f, "config:\n{}", self.config.trim_end())
    }
}

pub fn model_info(file: &ModelFile, file_size: u64) -> ModelInfo {
    let m = &file.model;
    ModelInfo {
        file_size,
        nz: m.grid.nz(),
        nx: m.grid.nx,
        n_intervals: m.n_intervals,
        n_training: m.n_training,
        interval_s: m.grid.interval_s,
        inner_product: m.inner_product,
        retained_modes: m.retained_modes(),
        terms_per_mode: m.terms_per_mode(),
        energy_fractions: m.energy_fractions(),
        raw_ensemble_bytes: (m.n_training * m.n_intervals * m.grid.points() * 8) as u64,
        config: m.provenance.config.clone(),
    }
}

pub fn cmd_info(model_path: &Path) -> Result<ModelInfo, PipelineError> {
    let bytes = std::fs::read(model_path).map_err(io_err(model_path))?;
    let file = ModelFile::from_bytes(&bytes)?;
    Ok(model_info(&file, bytes.len() as u64))
}

/// Results of one averaging interval in [`interval_study`].
#[derive(Debug, Clone)]
pub struct IntervalReport {
    pub interval_s: f64,
    pub retained_modes: usize,
    pub terms_per_mode: Vec<usize>,
    pub epsilon: f64,
    pub psd_source: SpectrumReport,
    pub psd_synth: SpectrumReport,
    pub coherence_source: CoherenceReport,
    pub coherence_synth: CoherenceReport,
}

/// Runs the whole pipeline once per averaging interval on the same days and
/// reports the spectra, coherence and covariance error side by side.
pub fn interval_study(
    days: &[LevelSeries],
    intervals: &[f64],
    cfg: &PipelineConfig,
) -> Result<Vec<IntervalReport>, PipelineError> {
    intervals
        .iter()
        .map(|&interval_s| {
            let cfg = PipelineConfig {
                interval_s,
                ..cfg.clone()
            };
            let source = build_ensemble(days, &cfg)?;
            let d = decompose_ensemble(source.clone(), &cfg)?;
            let synthetic = synth::generate_ensemble(&d.model, cfg.n_synth, cfg.seed);
            let r = diagnose(&source, &synthetic, &cfg)?;
            Ok(IntervalReport {
                interval_s,
                retained_modes: d.model.retained_modes(),
                terms_per_mode: d.model.terms_per_mode(),
                epsilon: r.epsilon,
                psd_source: r.psd_source,
                psd_synth: r.psd_synth,
                coherence_source: r.coherence_source,
                coherence_synth: r.coherence_synth,
            })
        })
        .collect()
}
