//! Tower time-series ingestion and snapshot-ensemble construction.
//!
//! Raw input is one CSV per day with a header `t_s,u_<h1>m,u_<h2>m,...`.
//! Each day's sensor series are interpolated onto a set of vertical levels
//! and cut into fixed-length intervals. Under the frozen-turbulence
//! hypothesis the samples of one interval are laid out along the
//! along-wind axis of a single `nz x nx` snapshot.

use std::path::{Path, PathBuf};

use thiserror::Error;

/// Relative tolerance used when checking that timestamps are equally spaced.
const STEP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: csv error: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("missing column `{column}`")]
    MissingColumn { column: String },
    #[error("row {row}: timestep {found} s differs from {expected} s")]
    NonUniformTimestep {
        row: usize,
        expected: f64,
        found: f64,
    },
    #[error("row {row}, column `{column}`: non-finite value")]
    NonFiniteValue { row: usize, column: String },
    #[error("row {row}, column `{column}`: negative speed {value}")]
    NegativeSpeed {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("row {row}, column `{column}`: cannot parse `{text}`")]
    Parse {
        row: usize,
        column: String,
        text: String,
    },
    #[error("need at least {needed} {what}, got {found}")]
    TooFew {
        what: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("sensor heights must be strictly increasing")]
    UnsortedHeights,
    #[error("level {level} m outside sensor span [{min}, {max}] m")]
    LevelOutOfRange { level: f64, min: f64, max: f64 },
    #[error("interval {interval_s} s does not divide the {span_s} s series into whole samples")]
    IntervalNotDivisor { interval_s: f64, span_s: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Column layout of a tower CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub time_column: String,
    /// `(column name, sensor height in m)`, in increasing height order.
    pub sensors: Vec<(String, f64)>,
}

impl CsvSchema {
    pub fn new(time_column: impl Into<String>, sensors: Vec<(String, f64)>) -> Self {
        Self {
            time_column: time_column.into(),
            sensors,
        }
    }

    /// Schema inferred from a header: `t_s` plus every `u_<h>m` column.
    pub fn from_header(header: &[&str]) -> Result<Self, IngestError> {
        if !header.contains(&"t_s") {
            return Err(IngestError::MissingColumn {
                column: "t_s".into(),
            });
        }
        let mut sensors: Vec<(String, f64)> = header
            .iter()
            .filter_map(|name| parse_sensor_column(name).map(|h| (name.to_string(), h)))
            .collect();
        if sensors.is_empty() {
            return Err(IngestError::MissingColumn {
                column: "u_<height>m".into(),
            });
        }
        sensors.sort_by(|a, b| a.1.total_cmp(&b.1));
        Ok(Self::new("t_s", sensors))
    }
}

/// Parses a `u_<h>m` column name into its height.
pub fn parse_sensor_column(name: &str) -> Option<f64> {
    let h = name.strip_prefix("u_")?.strip_suffix('m')?;
    h.parse::<f64>().ok().filter(|h| h.is_finite())
}

/// Column name for a sensor at height `h`.
pub fn sensor_column(h: f64) -> String {
    format!("u_{h}m")
}

/// Wind-speed time series recorded by a tower with several sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerSeries {
    /// Seconds since the start of the day, uniform step.
    pub timestamps: Vec<f64>,
    /// One series per sensor, m/s.
    pub speeds: Vec<Vec<f64>>,
    /// Strictly increasing, m.
    pub sensor_heights: Vec<f64>,
}

impl TowerSeries {
    pub fn new(
        timestamps: Vec<f64>,
        speeds: Vec<Vec<f64>>,
        sensor_heights: Vec<f64>,
    ) -> Result<Self, IngestError> {
        if sensor_heights.len() < 2 {
            return Err(IngestError::TooFew {
                what: "sensor heights",
                needed: 2,
                found: sensor_heights.len(),
            });
        }
        if sensor_heights.windows(2).any(|w| w[1] <= w[0]) {
            return Err(IngestError::UnsortedHeights);
        }
        if speeds.len() != sensor_heights.len() {
            return Err(IngestError::ShapeMismatch(format!(
                "{} speed series for {} sensors",
                speeds.len(),
                sensor_heights.len()
            )));
        }
        if timestamps.len() < 2 {
            return Err(IngestError::TooFew {
                what: "samples",
                needed: 2,
                found: timestamps.len(),
            });
        }
        for s in &speeds {
            if s.len() != timestamps.len() {
                return Err(IngestError::ShapeMismatch(
                    "speed series length differs from timestamp count".into(),
                ));
            }
        }
        check_uniform(&timestamps)?;
        for (series, h) in speeds.iter().zip(&sensor_heights) {
            for (row, &v) in series.iter().enumerate() {
                if !v.is_finite() {
                    return Err(IngestError::NonFiniteValue {
                        row: row + 1,
                        column: sensor_column(*h),
                    });
                }
                if v < 0.0 {
                    return Err(IngestError::NegativeSpeed {
                        row: row + 1,
                        column: sensor_column(*h),
                        value: v,
                    });
                }
            }
        }
        Ok(Self {
            timestamps,
            speeds,
            sensor_heights,
        })
    }

    pub fn step(&self) -> f64 {
        self.timestamps[1] - self.timestamps[0]
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

fn check_uniform(timestamps: &[f64]) -> Result<(), IngestError> {
    let step = timestamps[1] - timestamps[0];
    for (i, w) in timestamps.windows(2).enumerate() {
        let d = w[1] - w[0];
        if !(d > 0.0) || (d - step).abs() > STEP_TOLERANCE * step.abs().max(1.0) {
            return Err(IngestError::NonUniformTimestep {
                // data rows are 1-based; the offending row is the later one
                row: i + 2,
                expected: step,
                found: d,
            });
        }
    }
    Ok(())
}

/// Loads one day of tower data. Rows are numbered from 1 (the first data row).
pub fn load_tower_csv(path: &Path, schema: Option<&CsvSchema>) -> Result<TowerSeries, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_tower_csv(file, schema).map_err(|e| match e {
        IngestError::Csv { source, .. } => IngestError::Csv {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Reads tower data from any reader. See [`load_tower_csv`].
pub fn read_tower_csv<R: std::io::Read>(
    reader: R,
    schema: Option<&CsvSchema>,
) -> Result<TowerSeries, IngestError> {
    let csv_err = |source| IngestError::Csv {
        path: PathBuf::new(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let schema = match schema {
        Some(s) => s.clone(),
        None => CsvSchema::from_header(&header_refs)?,
    };
    let position = |name: &str| {
        header_refs
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| IngestError::MissingColumn {
                column: name.to_string(),
            })
    };
    let t_idx = position(&schema.time_column)?;
    let cols = schema
        .sensors
        .iter()
        .map(|(name, _)| position(name))
        .collect::<Result<Vec<_>, _>>()?;

    let mut timestamps = Vec::new();
    let mut speeds = vec![Vec::new(); cols.len()];
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(csv_err)?;
        let field = |idx: usize, name: &str| -> Result<f64, IngestError> {
            let text = record.get(idx).unwrap_or("");
            let v: f64 = text.parse().map_err(|_| IngestError::Parse {
                row,
                column: name.to_string(),
                text: text.to_string(),
            })?;
            if !v.is_finite() {
                return Err(IngestError::NonFiniteValue {
                    row,
                    column: name.to_string(),
                });
            }
            Ok(v)
        };
        timestamps.push(field(t_idx, &schema.time_column)?);
        for ((idx, (name, _)), out) in cols.iter().zip(&schema.sensors).zip(speeds.iter_mut()) {
            out.push(field(*idx, name)?);
        }
    }
    if timestamps.is_empty() {
        return Err(IngestError::MissingColumn {
            column: schema.time_column.clone(),
        });
    }
    let heights = schema.sensors.iter().map(|(_, h)| *h).collect();
    TowerSeries::new(timestamps, speeds, heights)
}

/// Writes series in the tower CSV layout. Used to export synthetic days.
pub fn write_tower_csv<W: std::io::Write>(
    writer: W,
    timestamps: &[f64],
    heights: &[f64],
    series: &[Vec<f64>],
) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(writer);
    write!(w, "t_s")?;
    for h in heights {
        write!(w, ",{}", sensor_column(*h))?;
    }
    writeln!(w)?;
    for (i, t) in timestamps.iter().enumerate() {
        write!(w, "{t}")?;
        for s in series {
            write!(w, ",{}", s[i])?;
        }
        writeln!(w)?;
    }
    w.flush()
}

/// Series on a set of vertical levels sharing a uniform time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSeries {
    pub levels: Vec<f64>,
    pub series: Vec<Vec<f64>>,
    /// Sampling step in seconds.
    pub step: f64,
}

impl LevelSeries {
    pub fn len(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn span_s(&self) -> f64 {
        self.len() as f64 * self.step
    }
}

/// `count` equally spaced levels spanning the sensor heights, endpoints included.
pub fn uniform_levels(bottom: f64, top: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![bottom];
    }
    let dz = (top - bottom) / (count - 1) as f64;
    (0..count)
        .map(|i| {
            if i == count - 1 {
                top
            } else {
                bottom + i as f64 * dz
            }
        })
        .collect()
}

/// Linear interpolation in height between bracketing sensors. No extrapolation.
pub fn interpolate_vertical(
    series: &TowerSeries,
    target_levels: &[f64],
) -> Result<LevelSeries, IngestError> {
    let hs = &series.sensor_heights;
    let (min, max) = (hs[0], hs[hs.len() - 1]);
    let mut out = Vec::with_capacity(target_levels.len());
    for &level in target_levels {
        if !(level >= min && level <= max) {
            return Err(IngestError::LevelOutOfRange { level, min, max });
        }
        if let Some(i) = hs.iter().position(|&h| h == level) {
            out.push(series.speeds[i].clone());
            continue;
        }
        // first sensor strictly above the level
        let hi = hs
            .iter()
            .position(|&h| h > level)
            .expect("level within span");
        let lo = hi - 1;
        let w = (level - hs[lo]) / (hs[hi] - hs[lo]);
        let (a, b) = (&series.speeds[lo], &series.speeds[hi]);
        out.push(a.iter().zip(b).map(|(&a, &b)| a + w * (b - a)).collect());
    }
    Ok(LevelSeries {
        levels: target_levels.to_vec(),
        series: out,
        step: series.step(),
    })
}

/// How the along-wind spacing of a snapshot is derived from wind speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DxMode {
    /// Each snapshot uses its own interval's mean speed.
    #[default]
    PerInterval,
    /// Every snapshot of a day uses the day's mean speed.
    Global,
}

/// Geometry shared by every snapshot of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotGrid {
    pub z_levels: Vec<f64>,
    pub nx: usize,
    /// Nominal along-wind spacing in m, used as the quadrature step.
    pub dx: f64,
    pub interval_s: f64,
}

impl SnapshotGrid {
    pub fn nz(&self) -> usize {
        self.z_levels.len()
    }

    /// Number of grid points per snapshot.
    pub fn points(&self) -> usize {
        self.nz() * self.nx
    }

    /// Uniform vertical spacing; 1 for a single level.
    pub fn dz(&self) -> f64 {
        let nz = self.nz();
        if nz < 2 {
            1.0
        } else {
            (self.z_levels[nz - 1] - self.z_levels[0]) / (nz - 1) as f64
        }
    }

    /// Quadrature weight of one grid cell, `dz * dx`.
    pub fn cell_weight(&self) -> f64 {
        self.dz() * self.dx
    }

    pub fn same_shape(&self, other: &SnapshotGrid) -> bool {
        self.z_levels == other.z_levels
            && self.nx == other.nx
            && self.interval_s == other.interval_s
    }
}

/// Snapshots for a single day, `n_intervals x nz x nx` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DaySnapshots {
    pub data: Vec<f64>,
    pub grid: SnapshotGrid,
    pub n_intervals: usize,
    /// Along-wind spacing of each snapshot, m.
    pub snapshot_dx: Vec<f64>,
}

/// Cuts a day into frozen-turbulence snapshots.
pub fn build_snapshots(
    levels: &LevelSeries,
    interval_s: f64,
    dx_mode: DxMode,
) -> Result<DaySnapshots, IngestError> {
    let span = levels.span_s();
    let nx_f = interval_s / levels.step;
    let nx = nx_f.round() as usize;
    let not_divisor = || IngestError::IntervalNotDivisor {
        interval_s,
        span_s: span,
    };
    if !(interval_s > 0.0) || nx == 0 || (nx_f - nx as f64).abs() > 1e-9 * nx_f {
        return Err(not_divisor());
    }
    let len = levels.len();
    if !len.is_multiple_of(nx) || len == 0 {
        return Err(not_divisor());
    }
    if levels.series.iter().any(|s| s.len() != len) {
        return Err(IngestError::ShapeMismatch(
            "level series have different lengths".into(),
        ));
    }
    if levels.levels.len() < 2 {
        return Err(IngestError::TooFew {
            what: "levels",
            needed: 2,
            found: levels.levels.len(),
        });
    }
    let n_intervals = len / nx;
    let nz = levels.levels.len();
    let mut data = Vec::with_capacity(len * nz);
    let mut snapshot_dx = Vec::with_capacity(n_intervals);
    for t in 0..n_intervals {
        let range = t * nx..(t + 1) * nx;
        let mut sum = 0.0;
        for s in &levels.series {
            let chunk = &s[range.clone()];
            data.extend_from_slice(chunk);
            sum += chunk.iter().sum::<f64>();
        }
        let mean_speed = sum / (nx * nz) as f64;
        snapshot_dx.push(mean_speed * interval_s / nx as f64);
    }
    let day_dx = snapshot_dx.iter().sum::<f64>() / n_intervals as f64;
    if dx_mode == DxMode::Global {
        snapshot_dx.iter_mut().for_each(|d| *d = day_dx);
    }
    Ok(DaySnapshots {
        data,
        grid: SnapshotGrid {
            z_levels: levels.levels.clone(),
            nx,
            dx: day_dx,
            interval_s,
        },
        n_intervals,
        snapshot_dx,
    })
}

/// Realization-by-interval ensemble, `n_realizations x n_intervals x nz x nx`
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityEnsemble {
    pub data: Vec<f64>,
    pub grid: SnapshotGrid,
    pub n_realizations: usize,
    pub n_intervals: usize,
    /// `n_realizations x n_intervals` along-wind spacings.
    pub snapshot_dx: Vec<f64>,
}

impl VelocityEnsemble {
    pub fn new(
        data: Vec<f64>,
        grid: SnapshotGrid,
        n_realizations: usize,
        n_intervals: usize,
    ) -> Result<Self, IngestError> {
        let expected = n_realizations * n_intervals * grid.points();
        if data.len() != expected {
            return Err(IngestError::ShapeMismatch(format!(
                "{} values for {} x {} x {} x {}",
                data.len(),
                n_realizations,
                n_intervals,
                grid.nz(),
                grid.nx
            )));
        }
        if let Some(row) = data.iter().position(|v| !v.is_finite()) {
            return Err(IngestError::NonFiniteValue {
                row,
                column: "ensemble".into(),
            });
        }
        let snapshot_dx = vec![grid.dx; n_realizations * n_intervals];
        Ok(Self {
            data,
            grid,
            n_realizations,
            n_intervals,
            snapshot_dx,
        })
    }

    pub fn points(&self) -> usize {
        self.grid.points()
    }

    /// One snapshot, `nz x nx` row-major.
    pub fn snapshot(&self, realization: usize, interval: usize) -> &[f64] {
        let p = self.points();
        let start = (realization * self.n_intervals + interval) * p;
        &self.data[start..start + p]
    }

    /// A whole realization, `n_intervals x nz x nx`.
    pub fn realization(&self, realization: usize) -> &[f64] {
        let len = self.n_intervals * self.points();
        &self.data[realization * len..(realization + 1) * len]
    }

    /// The time series seen at `level` and obtained by undoing the
    /// frozen-turbulence layout: intervals in order, along-wind samples in order.
    pub fn level_series(&self, realization: usize, level: usize) -> Vec<f64> {
        let nx = self.grid.nx;
        let mut out = Vec::with_capacity(self.n_intervals * nx);
        for t in 0..self.n_intervals {
            let snap = self.snapshot(realization, t);
            out.extend_from_slice(&snap[level * nx..(level + 1) * nx]);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Stacks days along the realization axis.
pub fn assemble_ensemble(days: Vec<DaySnapshots>) -> Result<VelocityEnsemble, IngestError> {
    let first = days.first().ok_or(IngestError::TooFew {
        what: "days",
        needed: 1,
        found: 0,
    })?;
    let grid = first.grid.clone();
    let n_intervals = first.n_intervals;
    for (i, d) in days.iter().enumerate() {
        if !d.grid.same_shape(&grid) || d.n_intervals != n_intervals {
            return Err(IngestError::ShapeMismatch(format!(
                "day {i} has {} intervals of {} x {} ({} s); expected {} of {} x {} ({} s)",
                d.n_intervals,
                d.grid.nz(),
                d.grid.nx,
                d.grid.interval_s,
                n_intervals,
                grid.nz(),
                grid.nx,
                grid.interval_s
            )));
        }
    }
    // sorted so the nominal spacing does not depend on day order
    let mut dxs: Vec<f64> = days.iter().map(|d| d.grid.dx).collect();
    dxs.sort_by(f64::total_cmp);
    let dx = dxs.iter().sum::<f64>() / dxs.len() as f64;

    let n = days.len();
    let mut data = Vec::with_capacity(n * n_intervals * grid.points());
    let mut snapshot_dx = Vec::with_capacity(n * n_intervals);
    for d in days {
        data.extend_from_slice(&d.data);
        snapshot_dx.extend_from_slice(&d.snapshot_dx);
    }
    Ok(VelocityEnsemble {
        data,
        grid: SnapshotGrid { dx, ..grid },
        n_realizations: n,
        n_intervals,
        snapshot_dx,
    })
}
