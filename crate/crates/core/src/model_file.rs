//! Self-contained binary files for reduced models and ensembles.
//!
//! # Layout (all integers `u64` and all floats IEEE-754 binary64, little-endian)
//!
//! ```text
//! magic          8 bytes   "WROMMDL\0" (model) or "WROMENS\0" (ensemble)
//! version        u32       currently 1
//! header         u64 count, then that many u64 values
//! scalars        u64 count, then that many f64 values
//! config echo    u64 length, then UTF-8 text
//! arrays         u64 count, then per array:
//!                  u64 name length, name bytes,
//!                  u64 ndim, ndim x u64 dims (row-major), f64 data
//! source hash    32 bytes  SHA-256 of the source ensemble
//! checksum       32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! Model header: `nz, nx, n_intervals, n_training, M, inner_product`.
//! Model scalars: `interval_s, dx`.
//! Model arrays: `z_levels`, `vbar`, `mu`, `T` (`M x n_intervals`), and for
//! every retained mode `i`: `abar/i`, `lambda/i`, `X/i` (`N x P`, one spatial
//! function per row), `xi/i` (`N x n_training`), `h/i`; optionally
//! `temporal_covariance`.
//!
//! Ensemble header: `nz, nx, n_realizations, n_intervals`; scalars
//! `interval_s, dx`; arrays `z_levels`, `snapshot_dx`, `data`.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bd::InnerProduct;
use crate::density::KdeModel;
use crate::ingest::{SnapshotGrid, VelocityEnsemble};
use crate::synth::{ModeBundle, Provenance, ReducedModel};

pub const MODEL_MAGIC: &[u8; 8] = b"WROMMDL\0";
pub const ENSEMBLE_MAGIC: &[u8; 8] = b"WROMENS\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt file: {0}")]
    CorruptModel(String),
    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
}

fn corrupt(msg: impl Into<String>) -> ModelFileError {
    ModelFileError::CorruptModel(msg.into())
}

/// A named row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    fn vector(name: impl Into<String>, data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            dims: vec![data.len()],
            data,
        }
    }

    fn matrix(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            dims: vec![rows, cols],
            data,
        }
    }

    /// Stores `m` with each column as a contiguous row.
    fn columns_as_rows(name: impl Into<String>, m: &DMatrix<f64>) -> Self {
        Self::matrix(name, m.ncols(), m.nrows(), m.as_slice().to_vec())
    }

    fn rows_of(name: impl Into<String>, m: &DMatrix<f64>) -> Self {
        Self::matrix(
            name,
            m.nrows(),
            m.ncols(),
            m.transpose().as_slice().to_vec(),
        )
    }
}

/// Format-level content shared by models and ensembles.
#[derive(Debug, Clone, PartialEq)]
struct Container {
    header: Vec<u64>,
    scalars: Vec<f64>,
    config: String,
    arrays: Vec<NamedArray>,
    source_hash: [u8; 32],
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

impl Container {
    fn encode(&self, magic: &[u8; 8]) -> Vec<u8> {
        let payload: usize = self.arrays.iter().map(|a| a.data.len() * 8 + 64).sum();
        let mut out = Vec::with_capacity(payload + 256 + self.config.len());
        out.extend_from_slice(magic);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_u64(&mut out, self.header.len() as u64);
        for &h in &self.header {
            put_u64(&mut out, h);
        }
        put_u64(&mut out, self.scalars.len() as u64);
        for s in &self.scalars {
            out.extend_from_slice(&s.to_le_bytes());
        }
        put_u64(&mut out, self.config.len() as u64);
        out.extend_from_slice(self.config.as_bytes());
        put_u64(&mut out, self.arrays.len() as u64);
        for a in &self.arrays {
            put_u64(&mut out, a.name.len() as u64);
            out.extend_from_slice(a.name.as_bytes());
            put_u64(&mut out, a.dims.len() as u64);
            for &d in &a.dims {
                put_u64(&mut out, d as u64);
            }
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.source_hash);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    fn decode(bytes: &[u8], magic: &[u8; 8]) -> Result<Self, ModelFileError> {
        if bytes.len() < 12 {
            return Err(corrupt("file too short"));
        }
        if &bytes[..8] != magic {
            return Err(corrupt("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(ModelFileError::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        if bytes.len() < 12 + 64 {
            return Err(corrupt("file too short"));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader {
            bytes: &body[..body.len() - 32],
            pos: 12,
        };
        let n_header = r.len()?;
        let header = (0..n_header).map(|_| r.u64()).collect::<Result<_, _>>()?;
        let n_scalars = r.len()?;
        let scalars = (0..n_scalars).map(|_| r.f64()).collect::<Result<_, _>>()?;
        let config_len = r.len()?;
        let config = String::from_utf8(r.take(config_len)?.to_vec())
            .map_err(|_| corrupt("config echo is not UTF-8"))?;
        let n_arrays = r.len()?;
        let mut arrays = Vec::with_capacity(n_arrays);
        for _ in 0..n_arrays {
            let name_len = r.len()?;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| corrupt("array name is not UTF-8"))?;
            let ndim = r.len()?;
            let dims: Vec<usize> = (0..ndim).map(|_| r.len()).collect::<Result<_, _>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| corrupt(format!("array `{name}` too large")))?;
            if count > r.remaining() / 8 {
                return Err(corrupt(format!("array `{name}` extends past the end")));
            }
            let data = (0..count).map(|_| r.f64()).collect::<Result<_, _>>()?;
            arrays.push(NamedArray { name, dims, data });
        }
        if r.remaining() != 0 {
            return Err(corrupt("trailing bytes before the source hash"));
        }
        let source_hash = body[body.len() - 32..].try_into().expect("32 bytes");
        Ok(Self {
            header,
            scalars,
            config,
            arrays,
            source_hash,
        })
    }

    fn array(&self, name: &str) -> Result<&NamedArray, ModelFileError> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| corrupt(format!("missing array `{name}`")))
    }

    fn array_shaped(&self, name: &str, dims: &[usize]) -> Result<&NamedArray, ModelFileError> {
        let a = self.array(name)?;
        if a.dims != dims {
            return Err(corrupt(format!(
                "array `{name}` has shape {:?}, expected {dims:?}",
                a.dims
            )));
        }
        Ok(a)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelFileError> {
        if n > self.remaining() {
            return Err(corrupt("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, ModelFileError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize, ModelFileError> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflows"))
    }

    fn f64(&mut self) -> Result<f64, ModelFileError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// A reduced model as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: ReducedModel,
    /// Optional copy of the source temporal covariance.
    pub temporal_covariance: Option<DMatrix<f64>>,
}

impl ModelFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let g = &m.grid;
        let p = g.points();
        let mut arrays = vec![
            NamedArray::vector("z_levels", g.z_levels.clone()),
            NamedArray::vector("vbar", m.vbar.clone()),
            NamedArray::vector("mu", m.mu.clone()),
            NamedArray::matrix(
                "T",
                m.temporal.len(),
                m.n_intervals,
                m.temporal.iter().flatten().copied().collect(),
            ),
        ];
        for (i, mode) in m.modes.iter().enumerate() {
            let xi: Vec<f64> = mode
                .kdes
                .iter()
                .flat_map(|k| k.observations().iter().copied())
                .collect();
            arrays.push(NamedArray::vector(format!("abar/{i}"), mode.abar.clone()));
            arrays.push(NamedArray::vector(
                format!("lambda/{i}"),
                mode.lambda.clone(),
            ));
            arrays.push(NamedArray::columns_as_rows(format!("X/{i}"), &mode.x));
            arrays.push(NamedArray::matrix(
                format!("xi/{i}"),
                mode.kdes.len(),
                m.n_training,
                xi,
            ));
            arrays.push(NamedArray::vector(
                format!("h/{i}"),
                mode.kdes.iter().map(KdeModel::bandwidth).collect(),
            ));
            debug_assert_eq!(mode.x.nrows(), p);
        }
        if let Some(c) = &self.temporal_covariance {
            arrays.push(NamedArray::rows_of("temporal_covariance", c));
        }
        Container {
            header: vec![
                g.nz() as u64,
                g.nx as u64,
                m.n_intervals as u64,
                m.n_training as u64,
                m.temporal.len() as u64,
                m.inner_product.index() as u64,
            ],
            scalars: vec![g.interval_s, g.dx],
            config: m.provenance.config.clone(),
            arrays,
            source_hash: m.provenance.source_hash,
        }
        .encode(MODEL_MAGIC)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelFileError> {
        let c = Container::decode(bytes, MODEL_MAGIC)?;
        let [nz, nx, n_intervals, n_training, m, ip] = c.header[..] else {
            return Err(corrupt("model header has the wrong length"));
        };
        let [nz, nx, n_intervals, n_training, m] =
            [nz, nx, n_intervals, n_training, m].map(|v| v as usize);
        let inner_product = u8::try_from(ip)
            .ok()
            .and_then(InnerProduct::from_index)
            .ok_or_else(|| corrupt(format!("unknown inner product {ip}")))?;
        let [interval_s, dx] = c.scalars[..] else {
            return Err(corrupt("model scalars have the wrong length"));
        };
        let p = nz * nx;
        let grid = SnapshotGrid {
            z_levels: c.array_shaped("z_levels", &[nz])?.data.clone(),
            nx,
            dx,
            interval_s,
        };
        let vbar = c.array_shaped("vbar", &[p])?.data.clone();
        let mu = c.array("mu")?;
        if mu.dims.len() != 1 {
            return Err(corrupt("`mu` is not a vector"));
        }
        let temporal = c
            .array_shaped("T", &[m, n_intervals])?
            .data
            .chunks(n_intervals.max(1))
            .take(m)
            .map(<[f64]>::to_vec)
            .collect();
        let mut modes = Vec::with_capacity(m);
        for i in 0..m {
            let abar = c.array_shaped(&format!("abar/{i}"), &[p])?.data.clone();
            let lambda = c.array(&format!("lambda/{i}"))?;
            let h = c.array(&format!("h/{i}"))?;
            let terms = h.data.len();
            if lambda.dims.len() != 1 || lambda.data.len() < terms {
                return Err(corrupt(format!(
                    "mode {i} spectrum is shorter than its terms"
                )));
            }
            let x = c.array_shaped(&format!("X/{i}"), &[terms, p])?;
            let xi = c.array_shaped(&format!("xi/{i}"), &[terms, n_training])?;
            let kdes = xi
                .data
                .chunks(n_training.max(1))
                .take(terms)
                .zip(&h.data)
                .map(|(obs, &h)| KdeModel::with_bandwidth(obs.to_vec(), h))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| corrupt(format!("mode {i}: {e}")))?;
            modes.push(ModeBundle {
                abar,
                lambda: lambda.data.clone(),
                x: DMatrix::from_column_slice(p, terms, &x.data),
                kdes,
            });
        }
        let temporal_covariance = match c.arrays.iter().find(|a| a.name == "temporal_covariance") {
            Some(a) if a.dims.len() == 2 => {
                Some(DMatrix::from_row_slice(a.dims[0], a.dims[1], &a.data))
            }
            Some(_) => return Err(corrupt("`temporal_covariance` is not a matrix")),
            None => None,
        };
        Ok(Self {
            model: ReducedModel {
                grid,
                n_intervals,
                n_training,
                inner_product,
                vbar,
                mu: mu.data.clone(),
                temporal,
                modes,
                provenance: Provenance {
                    source_hash: c.source_hash,
                    config: c.config,
                },
            },
            temporal_covariance,
        })
    }

    pub fn write(&self, path: &Path) -> Result<u64, ModelFileError> {
        let bytes = self.to_bytes();
        write_bytes(path, &bytes)?;
        Ok(bytes.len() as u64)
    }

    pub fn read(path: &Path) -> Result<Self, ModelFileError> {
        Self::from_bytes(&read_bytes(path)?)
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), ModelFileError> {
    std::fs::write(path, bytes).map_err(|source| ModelFileError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, ModelFileError> {
    std::fs::read(path).map_err(|source| ModelFileError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// True when `path` starts with the ensemble magic bytes.
pub fn is_ensemble_file(path: &Path) -> bool {
    use std::io::Read;
    let mut head = [0u8; 8];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map(|_| &head == ENSEMBLE_MAGIC)
        .unwrap_or(false)
}

/// SHA-256 of an ensemble's dimensions and values.
pub fn ensemble_hash(ensemble: &VelocityEnsemble) -> [u8; 32] {
    let mut h = Sha256::new();
    for d in [
        ensemble.grid.nz(),
        ensemble.grid.nx,
        ensemble.n_realizations,
        ensemble.n_intervals,
    ] {
        h.update((d as u64).to_le_bytes());
    }
    for v in &ensemble.data {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

pub fn ensemble_to_bytes(ensemble: &VelocityEnsemble) -> Vec<u8> {
    let g = &ensemble.grid;
    Container {
        header: vec![
            g.nz() as u64,
            g.nx as u64,
            ensemble.n_realizations as u64,
            ensemble.n_intervals as u64,
        ],
        scalars: vec![g.interval_s, g.dx],
        config: String::new(),
        arrays: vec![
            NamedArray::vector("z_levels", g.z_levels.clone()),
            NamedArray::matrix(
                "snapshot_dx",
                ensemble.n_realizations,
                ensemble.n_intervals,
                ensemble.snapshot_dx.clone(),
            ),
            NamedArray {
                name: "data".into(),
                dims: vec![ensemble.n_realizations, ensemble.n_intervals, g.nz(), g.nx],
                data: ensemble.data.clone(),
            },
        ],
        source_hash: ensemble_hash(ensemble),
    }
    .encode(ENSEMBLE_MAGIC)
}

pub fn ensemble_from_bytes(bytes: &[u8]) -> Result<VelocityEnsemble, ModelFileError> {
    let c = Container::decode(bytes, ENSEMBLE_MAGIC)?;
    let [nz, nx, n, m] = c.header[..] else {
        return Err(corrupt("ensemble header has the wrong length"));
    };
    let [nz, nx, n, m] = [nz, nx, n, m].map(|v| v as usize);
    let [interval_s, dx] = c.scalars[..] else {
        return Err(corrupt("ensemble scalars have the wrong length"));
    };
    let grid = SnapshotGrid {
        z_levels: c.array_shaped("z_levels", &[nz])?.data.clone(),
        nx,
        dx,
        interval_s,
    };
    let snapshot_dx = c.array_shaped("snapshot_dx", &[n, m])?.data.clone();
    let data = c.array_shaped("data", &[n, m, nz, nx])?.data.clone();
    Ok(VelocityEnsemble {
        data,
        grid,
        n_realizations: n,
        n_intervals: m,
        snapshot_dx,
    })
}

pub fn write_ensemble(path: &Path, ensemble: &VelocityEnsemble) -> Result<u64, ModelFileError> {
    let bytes = ensemble_to_bytes(ensemble);
    write_bytes(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn read_ensemble(path: &Path) -> Result<VelocityEnsemble, ModelFileError> {
    ensemble_from_bytes(&read_bytes(path)?)
}
