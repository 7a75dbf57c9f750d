//! Spectral and covariance comparisons between source and synthetic ensembles.

use std::io::Write;

use nalgebra::DMatrix;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use std::sync::Arc;
use thiserror::Error;

use crate::ingest::VelocityEnsemble;

pub use crate::pipeline::{interval_study, IntervalReport};

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("series of {len} samples is shorter than twice the segment length {segment}")]
    SeriesTooShort { len: usize, segment: usize },
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("source covariance has zero norm")]
    ZeroSourceNorm,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid Welch parameters: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    /// Periodic Hann window.
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        }
    }
}

/// Welch estimator parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchConfig {
    pub segment_len: usize,
    /// Fraction of a segment shared with the next one, in `[0, 1)`.
    pub overlap: f64,
    pub window: Window,
    /// Remove each segment's mean before transforming.
    pub detrend: bool,
    /// For ensembles, keep every segment inside one snapshot so no segment
    /// straddles the seam between consecutive intervals.
    pub within_snapshots: bool,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            segment_len: 256,
            overlap: 0.5,
            window: Window::Hann,
            detrend: true,
            within_snapshots: true,
        }
    }
}

impl WelchConfig {
    fn step(&self) -> usize {
        let shared = (self.segment_len as f64 * self.overlap).round() as usize;
        (self.segment_len - shared).max(1)
    }

    fn validate(&self) -> Result<(), DiagnosticsError> {
        if self.segment_len < 2 {
            return Err(DiagnosticsError::InvalidConfig(
                "segment length below 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(DiagnosticsError::InvalidConfig(format!(
                "overlap {} outside [0, 1)",
                self.overlap
            )));
        }
        Ok(())
    }

    /// Number of segments used for a series of `len` samples.
    pub fn segments(&self, len: usize) -> usize {
        if len < self.segment_len {
            0
        } else {
            (len - self.segment_len) / self.step() + 1
        }
    }

    fn describe(&self) -> String {
        format!(
            "segment_len={} overlap={} window={} detrend={} within_snapshots={}",
            self.segment_len,
            self.overlap,
            self.window.name(),
            if self.detrend { "constant" } else { "none" },
            self.within_snapshots,
        )
    }
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub frequencies: Vec<f64>,
    pub psd: Vec<f64>,
    pub config: WelchConfig,
    pub segments: usize,
}

impl SpectrumReport {
    /// `sum psd * df`, the variance captured by the estimate.
    pub fn integrated_power(&self) -> f64 {
        let df = self
            .frequencies
            .get(1)
            .map_or(0.0, |f| f - self.frequencies[0]);
        self.psd.iter().sum::<f64>() * df
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# {} segments={}", self.config.describe(), self.segments)?;
        writeln!(w, "frequency_hz,psd")?;
        for (f, p) in self.frequencies.iter().zip(&self.psd) {
            writeln!(w, "{f},{p}")?;
        }
        Ok(())
    }
}

/// Magnitude-squared coherence between two series.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceReport {
    pub frequencies: Vec<f64>,
    pub coherence: Vec<f64>,
    /// Bins where either auto-spectrum vanishes; their coherence is reported as 0.
    pub degenerate: Vec<bool>,
    pub config: WelchConfig,
    pub segments: usize,
}

impl CoherenceReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# {} segments={}", self.config.describe(), self.segments)?;
        writeln!(w, "frequency_hz,coherence")?;
        for (f, c) in self.frequencies.iter().zip(&self.coherence) {
            writeln!(w, "{f},{c}")?;
        }
        Ok(())
    }
}

/// Accumulates windowed segment spectra for one or two series.
struct Welch {
    config: WelchConfig,
    window: Vec<f64>,
    window_power: f64,
    fft: Arc<dyn Fft<f64>>,
    bins: usize,
    saa: Vec<f64>,
    sbb: Vec<f64>,
    sab: Vec<Complex<f64>>,
    segments: usize,
}

impl Welch {
    fn new(config: WelchConfig) -> Result<Self, DiagnosticsError> {
        config.validate()?;
        let window = config.window.coefficients(config.segment_len);
        let window_power = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(config.segment_len);
        let bins = config.segment_len / 2 + 1;
        Ok(Self {
            config,
            window,
            window_power,
            fft,
            bins,
            saa: vec![0.0; bins],
            sbb: vec![0.0; bins],
            sab: vec![Complex::new(0.0, 0.0); bins],
            segments: 0,
        })
    }

    fn check_len(&self, len: usize) -> Result<(), DiagnosticsError> {
        if len < 2 * self.config.segment_len {
            return Err(DiagnosticsError::SeriesTooShort {
                len,
                segment: self.config.segment_len,
            });
        }
        Ok(())
    }

    fn transform(&self, seg: &[f64]) -> Vec<Complex<f64>> {
        let mean = if self.config.detrend {
            seg.iter().sum::<f64>() / seg.len() as f64
        } else {
            0.0
        };
        let mut buf: Vec<Complex<f64>> = seg
            .iter()
            .zip(&self.window)
            .map(|(x, w)| Complex::new((x - mean) * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        buf.truncate(self.bins);
        buf
    }

    fn add_auto(&mut self, series: &[f64]) {
        let (len, step) = (self.config.segment_len, self.config.step());
        for s in 0..self.config.segments(series.len()) {
            let spec = self.transform(&series[s * step..s * step + len]);
            for (acc, c) in self.saa.iter_mut().zip(&spec) {
                *acc += c.norm_sqr();
            }
            self.segments += 1;
        }
    }

    fn add_pair(&mut self, a: &[f64], b: &[f64]) {
        let (len, step) = (self.config.segment_len, self.config.step());
        for s in 0..self.config.segments(a.len()) {
            let range = s * step..s * step + len;
            let fa = self.transform(&a[range.clone()]);
            let fb = self.transform(&b[range]);
            for k in 0..self.bins {
                self.saa[k] += fa[k].norm_sqr();
                self.sbb[k] += fb[k].norm_sqr();
                self.sab[k] += fa[k].conj() * fb[k];
            }
            self.segments += 1;
        }
    }

    fn frequencies(&self, sample_rate: f64) -> Vec<f64> {
        (0..self.bins)
            .map(|k| k as f64 * sample_rate / self.config.segment_len as f64)
            .collect()
    }

    fn psd(self, sample_rate: f64) -> SpectrumReport {
        let len = self.config.segment_len;
        let norm = 1.0 / (sample_rate * self.window_power * self.segments.max(1) as f64);
        let psd = self
            .saa
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let one_sided = if k == 0 || (len.is_multiple_of(2) && k == len / 2) {
                    1.0
                } else {
                    2.0
                };
                s * norm * one_sided
            })
            .collect();
        SpectrumReport {
            frequencies: self.frequencies(sample_rate),
            psd,
            config: self.config,
            segments: self.segments,
        }
    }

    fn coherence(self, sample_rate: f64) -> CoherenceReport {
        let scale = self
            .saa
            .iter()
            .chain(&self.sbb)
            .fold(0.0_f64, |m, v| m.max(*v));
        let floor = 1e-24 * scale;
        let mut degenerate = Vec::with_capacity(self.bins);
        let coherence = (0..self.bins)
            .map(|k| {
                let denom = self.saa[k] * self.sbb[k];
                if self.saa[k] <= floor || self.sbb[k] <= floor {
                    degenerate.push(true);
                    0.0
                } else {
                    degenerate.push(false);
                    (self.sab[k].norm_sqr() / denom).clamp(0.0, 1.0)
                }
            })
            .collect();
        CoherenceReport {
            frequencies: self.frequencies(sample_rate),
            coherence,
            degenerate,
            config: self.config,
            segments: self.segments,
        }
    }
}

/// Welch-averaged one-sided PSD.
pub fn psd(
    series: &[f64],
    sample_rate: f64,
    config: &WelchConfig,
) -> Result<SpectrumReport, DiagnosticsError> {
    let mut w = Welch::new(*config)?;
    w.check_len(series.len())?;
    w.add_auto(series);
    Ok(w.psd(sample_rate))
}

/// Magnitude-squared coherence `|S_ab|^2 / (S_aa S_bb)`.
pub fn coherence(
    a: &[f64],
    b: &[f64],
    sample_rate: f64,
    config: &WelchConfig,
) -> Result<CoherenceReport, DiagnosticsError> {
    if a.len() != b.len() {
        return Err(DiagnosticsError::LengthMismatch(a.len(), b.len()));
    }
    let mut w = Welch::new(*config)?;
    w.check_len(a.len())?;
    w.add_pair(a, b);
    Ok(w.coherence(sample_rate))
}

/// Sampling rate of the series recovered from an ensemble's snapshots.
pub fn ensemble_sample_rate(ensemble: &VelocityEnsemble) -> f64 {
    ensemble.grid.nx as f64 / ensemble.grid.interval_s
}

fn check_level(ensemble: &VelocityEnsemble, level: usize) -> Result<(), DiagnosticsError> {
    if level >= ensemble.grid.nz() {
        return Err(DiagnosticsError::ShapeMismatch(format!(
            "level {level} outside {} levels",
            ensemble.grid.nz()
        )));
    }
    Ok(())
}

/// The pieces of a level series that Welch segments may span.
fn pieces(
    ensemble: &VelocityEnsemble,
    config: &WelchConfig,
    series: Vec<f64>,
) -> Result<Vec<Vec<f64>>, DiagnosticsError> {
    if !config.within_snapshots {
        if series.len() < 2 * config.segment_len {
            return Err(DiagnosticsError::SeriesTooShort {
                len: series.len(),
                segment: config.segment_len,
            });
        }
        return Ok(vec![series]);
    }
    let nx = ensemble.grid.nx;
    if nx < config.segment_len || series.len() < 2 * config.segment_len {
        return Err(DiagnosticsError::SeriesTooShort {
            len: nx,
            segment: config.segment_len,
        });
    }
    Ok(series.chunks(nx).map(<[f64]>::to_vec).collect())
}

/// PSD at one level, averaged over every segment of every realization.
pub fn psd_ensemble(
    ensemble: &VelocityEnsemble,
    level: usize,
    config: &WelchConfig,
) -> Result<SpectrumReport, DiagnosticsError> {
    check_level(ensemble, level)?;
    let mut w = Welch::new(*config)?;
    for k in 0..ensemble.n_realizations {
        for piece in pieces(ensemble, config, ensemble.level_series(k, level))? {
            w.add_auto(&piece);
        }
    }
    Ok(w.psd(ensemble_sample_rate(ensemble)))
}

/// Coherence between two levels with cross-spectra averaged over realizations.
pub fn coherence_ensemble(
    ensemble: &VelocityEnsemble,
    level_a: usize,
    level_b: usize,
    config: &WelchConfig,
) -> Result<CoherenceReport, DiagnosticsError> {
    check_level(ensemble, level_a)?;
    check_level(ensemble, level_b)?;
    let mut w = Welch::new(*config)?;
    for k in 0..ensemble.n_realizations {
        let a = pieces(ensemble, config, ensemble.level_series(k, level_a))?;
        let b = pieces(ensemble, config, ensemble.level_series(k, level_b))?;
        for (a, b) in a.iter().zip(&b) {
            w.add_pair(a, b);
        }
    }
    Ok(w.coherence(ensemble_sample_rate(ensemble)))
}

/// `||C - C_hat||_F / ||C||_F`.
pub fn covariance_error(c: &DMatrix<f64>, c_hat: &DMatrix<f64>) -> Result<f64, DiagnosticsError> {
    if c.shape() != c_hat.shape() {
        return Err(DiagnosticsError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            c.shape(),
            c_hat.shape()
        )));
    }
    let num: f64 = c
        .iter()
        .zip(c_hat.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let den: f64 = c.iter().map(|a| a * a).sum();
    if den == 0.0 {
        return Err(DiagnosticsError::ZeroSourceNorm);
    }
    Ok((num / den).sqrt())
}

/// Root-mean-square difference of two curves on the same frequency grid.
pub fn rms_difference(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64).sqrt()
}
