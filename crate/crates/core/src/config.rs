//! Flat `key=value` pipeline configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::bd::{InnerProduct, Truncation};
use crate::density::BandwidthRule;
use crate::diagnostics::{WelchConfig, Window};
use crate::ingest::DxMode;
use crate::kle::{CovarianceEstimator, EigenMethod, KleConfig};

const DAY_S: f64 = 86_400.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key=value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: invalid value `{value}`")]
    InvalidValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

/// Every pipeline setting. Defaults reproduce the reference configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Day CSV files, directories of them, or one ensemble file.
    pub input: Vec<PathBuf>,
    pub output: Option<PathBuf>,
    /// Where `decompose` also stores the assembled source ensemble.
    pub ensemble_output: Option<PathBuf>,

    pub interval_s: f64,
    pub nz: usize,
    pub dx_mode: DxMode,

    pub inner_product: InnerProduct,
    pub bd_threshold: f64,
    pub bd_modes: Option<usize>,
    pub kle_threshold: f64,
    pub kle_terms: Option<usize>,
    pub covariance: CovarianceEstimator,
    pub kle_method: EigenMethod,
    pub bandwidth: BandwidthRule,
    pub store_temporal_covariance: bool,

    pub seed: u64,
    pub n_synth: usize,

    pub welch_segment: usize,
    pub welch_overlap: f64,
    pub welch_window: Window,
    pub welch_detrend: bool,
    pub welch_within_snapshots: bool,
    /// Level index for PSD reports; the top level when unset.
    pub psd_level: Option<usize>,
    /// Level pair for coherence reports; bottom and top when unset.
    pub coherence_levels: Option<(usize, usize)>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let welch = WelchConfig::default();
        Self {
            input: Vec::new(),
            output: None,
            ensemble_output: None,
            interval_s: 600.0,
            nz: 20,
            dx_mode: DxMode::PerInterval,
            inner_product: InnerProduct::MeanProduct,
            bd_threshold: 0.9,
            bd_modes: None,
            kle_threshold: 0.9,
            kle_terms: None,
            covariance: CovarianceEstimator::Population,
            kle_method: EigenMethod::Auto,
            bandwidth: BandwidthRule::SilvermanApprox,
            store_temporal_covariance: false,
            seed: 0,
            n_synth: 28,
            welch_segment: welch.segment_len,
            welch_overlap: welch.overlap,
            welch_window: welch.window,
            welch_detrend: welch.detrend,
            welch_within_snapshots: welch.within_snapshots,
            psd_level: None,
            coherence_levels: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
    })
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError> {
    if value == "auto" || value.is_empty() {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::InvalidValue {
            key: key.into(),
            value: value.into(),
        }),
    }
}

fn optional_text<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".into(), T::to_string)
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses `key=value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let invalid = || ConfigError::InvalidValue {
            key: key.into(),
            value: value.into(),
        };
        match key {
            "input" => {
                self.input = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            "output" => self.output = (!value.is_empty()).then(|| value.into()),
            "ensemble_output" => self.ensemble_output = (!value.is_empty()).then(|| value.into()),
            "interval_s" => self.interval_s = parse(key, value)?,
            "nz" => self.nz = parse(key, value)?,
            "dx_mode" => {
                self.dx_mode = match value {
                    "per_interval" => DxMode::PerInterval,
                    "global" => DxMode::Global,
                    _ => return Err(invalid()),
                }
            }
            "inner_product" => {
                self.inner_product =
                    InnerProduct::from_index(parse(key, value)?).ok_or_else(invalid)?
            }
            "bd_threshold" => self.bd_threshold = parse(key, value)?,
            "bd_modes" => self.bd_modes = parse_optional(key, value)?,
            "kle_threshold" => self.kle_threshold = parse(key, value)?,
            "kle_terms" => self.kle_terms = parse_optional(key, value)?,
            "covariance" => {
                self.covariance = match value {
                    "population" => CovarianceEstimator::Population,
                    "unbiased" => CovarianceEstimator::Unbiased,
                    _ => return Err(invalid()),
                }
            }
            "kle_method" => {
                self.kle_method = match value {
                    "auto" => EigenMethod::Auto,
                    "dense" => EigenMethod::Dense,
                    "snapshot" => EigenMethod::Snapshot,
                    _ => return Err(invalid()),
                }
            }
            "bandwidth" => self.bandwidth = BandwidthRule::from_name(value).ok_or_else(invalid)?,
            "store_temporal_covariance" => self.store_temporal_covariance = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "n_synth" => self.n_synth = parse(key, value)?,
            "welch_segment" => self.welch_segment = parse(key, value)?,
            "welch_overlap" => self.welch_overlap = parse(key, value)?,
            "welch_window" => {
                self.welch_window = match value {
                    "hann" => Window::Hann,
                    "rectangular" => Window::Rectangular,
                    _ => return Err(invalid()),
                }
            }
            "welch_detrend" => {
                self.welch_detrend = match value {
                    "constant" => true,
                    "none" => false,
                    _ => return Err(invalid()),
                }
            }
            "welch_within_snapshots" => self.welch_within_snapshots = parse_bool(key, value)?,
            "psd_level" => self.psd_level = parse_optional(key, value)?,
            "coherence_levels" => {
                self.coherence_levels = if value == "auto" {
                    None
                } else {
                    let (a, b) = value.split_once(',').ok_or_else(invalid)?;
                    Some((parse(key, a.trim())?, parse(key, b.trim())?))
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("bd_threshold", self.bd_threshold),
            ("kle_threshold", self.kle_threshold),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ConfigError::Invalid(format!("{name} {v} outside (0, 1]")));
            }
        }
        if !(self.interval_s > 0.0) || (DAY_S / self.interval_s).fract() != 0.0 {
            return Err(ConfigError::Invalid(format!(
                "interval_s {} does not divide a day",
                self.interval_s
            )));
        }
        if self.nz < 2 {
            return Err(ConfigError::Invalid("nz must be at least 2".into()));
        }
        if self.welch_segment < 2 || !(0.0..1.0).contains(&self.welch_overlap) {
            return Err(ConfigError::Invalid(format!(
                "Welch segment {} / overlap {} invalid",
                self.welch_segment, self.welch_overlap
            )));
        }
        Ok(())
    }

    pub fn bd_truncation(&self) -> Truncation {
        self.bd_modes
            .map_or(Truncation::Energy(self.bd_threshold), Truncation::Fixed)
    }

    pub fn kle_config(&self) -> KleConfig {
        KleConfig {
            truncation: self
                .kle_terms
                .map_or(Truncation::Energy(self.kle_threshold), Truncation::Fixed),
            estimator: self.covariance,
            method: self.kle_method,
            ..KleConfig::default()
        }
    }

    pub fn welch(&self) -> WelchConfig {
        WelchConfig {
            segment_len: self.welch_segment,
            overlap: self.welch_overlap,
            window: self.welch_window,
            detrend: self.welch_detrend,
            within_snapshots: self.welch_within_snapshots,
        }
    }

    pub fn psd_level(&self, nz: usize) -> usize {
        self.psd_level.unwrap_or(nz.saturating_sub(1))
    }

    pub fn coherence_levels(&self, nz: usize) -> (usize, usize) {
        self.coherence_levels.unwrap_or((0, nz.saturating_sub(1)))
    }

    /// Every setting that shapes the model, one `key=value` per line.
    /// Paths are left out so the echo depends only on the method.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let dx_mode = match self.dx_mode {
            DxMode::PerInterval => "per_interval",
            DxMode::Global => "global",
        };
        let covariance = match self.covariance {
            CovarianceEstimator::Population => "population",
            CovarianceEstimator::Unbiased => "unbiased",
        };
        let method = match self.kle_method {
            EigenMethod::Auto => "auto",
            EigenMethod::Dense => "dense",
            EigenMethod::Snapshot => "snapshot",
        };
        let coherence = self
            .coherence_levels
            .map_or_else(|| "auto".to_string(), |(a, b)| format!("{a},{b}"));
        let lines = [
            ("interval_s", self.interval_s.to_string()),
            ("nz", self.nz.to_string()),
            ("dx_mode", dx_mode.into()),
            ("inner_product", self.inner_product.index().to_string()),
            ("bd_threshold", self.bd_threshold.to_string()),
            ("bd_modes", optional_text(&self.bd_modes)),
            ("kle_threshold", self.kle_threshold.to_string()),
            ("kle_terms", optional_text(&self.kle_terms)),
            ("covariance", covariance.into()),
            ("kle_method", method.into()),
            ("bandwidth", self.bandwidth.name().into()),
            (
                "store_temporal_covariance",
                self.store_temporal_covariance.to_string(),
            ),
            ("seed", self.seed.to_string()),
            ("n_synth", self.n_synth.to_string()),
            ("welch_segment", self.welch_segment.to_string()),
            ("welch_overlap", self.welch_overlap.to_string()),
            ("welch_window", self.welch_window.name().into()),
            (
                "welch_detrend",
                if self.welch_detrend {
                    "constant"
                } else {
                    "none"
                }
                .into(),
            ),
            (
                "welch_within_snapshots",
                self.welch_within_snapshots.to_string(),
            ),
            ("psd_level", optional_text(&self.psd_level)),
            ("coherence_levels", coherence),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let cfg = PipelineConfig {
            inner_product: InnerProduct::Covariance,
            kle_terms: Some(3),
            coherence_levels: Some((1, 4)),
            bandwidth: BandwidthRule::SilvermanExact,
            welch_within_snapshots: false,
            ..PipelineConfig::default()
        };
        let back = PipelineConfig::parse(&cfg.echo()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(
            PipelineConfig::parse(&PipelineConfig::default().echo()).unwrap(),
            PipelineConfig::default()
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            PipelineConfig::parse("nope"),
            Err(ConfigError::Syntax { line: 1 })
        ));
        assert!(matches!(
            PipelineConfig::parse("colour=red"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            PipelineConfig::parse("bd_threshold=0"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            PipelineConfig::parse("bd_threshold=1.5"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            PipelineConfig::parse("interval_s=700"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            PipelineConfig::parse("inner_product=3"),
            Err(ConfigError::InvalidValue { .. })
        ));
        let cfg = PipelineConfig::parse("# comment\n\ninterval_s = 900 # trailing\nbd_threshold=1")
            .unwrap();
        assert_eq!(cfg.interval_s, 900.0);
        assert_eq!(cfg.bd_threshold, 1.0);
    }
}
