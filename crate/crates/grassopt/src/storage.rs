//! Artifact persistence.
//!
//! Matrices travel in two interchangeable forms:
//!
//! * **GRMX container** — little-endian binary: the magic bytes `GRMX`,
//!   `u32` row count, `u32` column count, then `rows·cols` f64 values in
//!   row-major order.
//! * **CSV** — one matrix row per line, comma-separated, no header. Floats
//!   are printed in Rust's shortest round-trip form, so a read-back is
//!   bit-exact.
//!
//! Optimization traces serialize to CSV with the fixed header
//! `k,f,J,delta_norm,grad_norm,err_norm,eta,backtracks,func_evals,wall_ns`
//! (empty fields where a value is unavailable), plus a JSON metadata sidecar.
//! All writes go through a temp-file-and-rename so partially written
//! artifacts never appear under their final name.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::GrassmannPoint;
use crate::objective::ClassStats;
use crate::optimizer::Trace;
use crate::simulate::{ClassId, Dataset, GridSpec};

const GRMX_MAGIC: &[u8; 4] = b"GRMX";

/// Writes bytes to `path` atomically (temp file in the same directory, then
/// rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_matrix_grmx(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let (rows, cols) = (m.nrows(), m.ncols());
    let mut bytes = Vec::with_capacity(12 + 8 * rows * cols);
    bytes.extend_from_slice(GRMX_MAGIC);
    bytes.extend_from_slice(&(rows as u32).to_le_bytes());
    bytes.extend_from_slice(&(cols as u32).to_le_bytes());
    for i in 0..rows {
        for j in 0..cols {
            bytes.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

pub fn read_matrix_grmx(path: &Path) -> Result<DMatrix<f64>> {
    let malformed = |reason: &str| Error::Malformed {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != GRMX_MAGIC {
        return Err(malformed("missing GRMX magic"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + 8 * rows * cols;
    if bytes.len() != expected {
        return Err(malformed(&format!(
            "expected {expected} bytes for {rows}x{cols}, found {}",
            bytes.len()
        )));
    }
    let mut m = DMatrix::<f64>::zeros(rows, cols);
    let mut offset = 12;
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
            offset += 8;
        }
    }
    Ok(m)
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", m[(i, j)]));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let malformed = |reason: String| Error::Malformed {
        path: path.display().to_string(),
        reason,
    };
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|tok| tok.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| malformed(format!("line {}: {e}", lineno + 1)))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(malformed(format!(
                    "line {}: ragged row ({} vs {} columns)",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(malformed("no rows".into()));
    }
    let (r, c) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Serializes a value as pretty JSON (with trailing newline), atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Trace CSV with the fixed header. `timing` controls whether wall-clock
/// nanoseconds are emitted; they are left empty by default so that repeated
/// runs produce byte-identical artifacts.
pub fn write_trace_csv(path: &Path, trace: &Trace, timing: bool) -> Result<()> {
    let mut out = String::from("k,f,J,delta_norm,grad_norm,err_norm,eta,backtracks,func_evals,wall_ns\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in &trace.records {
        let wall = if timing {
            format!("{}", r.wall_ns)
        } else {
            String::new()
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.k,
            r.f_value,
            opt(r.j_value),
            r.delta_norm,
            opt(r.true_grad_norm),
            opt(r.err_norm),
            r.eta_used,
            r.backtracks,
            r.func_evals,
            wall,
        ));
    }
    atomic_write(path, out.as_bytes())
}

/// JSON sidecar describing a persisted [`ClassStats`] triple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsMeta {
    pub n: usize,
    pub p: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub seed: u64,
    pub generator: String,
    #[serde(default)]
    pub config_hash: String,
}

/// Writes `<stem>_k1.grmx`, `<stem>_k2.grmx`, `<stem>_s.grmx` and
/// `<stem>.json` under `dir`.
pub fn save_class_stats(dir: &Path, stem: &str, stats: &ClassStats, meta: &StatsMeta) -> Result<()> {
    write_matrix_grmx(&dir.join(format!("{stem}_k1.grmx")), stats.k1())?;
    write_matrix_grmx(&dir.join(format!("{stem}_k2.grmx")), stats.k2())?;
    let s = DMatrix::from_column_slice(stats.s().len(), 1, stats.s().as_slice());
    write_matrix_grmx(&dir.join(format!("{stem}_s.grmx")), &s)?;
    write_json(&dir.join(format!("{stem}.json")), meta)
}

/// Counterpart of [`save_class_stats`]. Symmetry is re-validated on load but
/// positive definiteness is not, so estimated (possibly rank-deficient)
/// statistics round-trip unchanged.
pub fn load_class_stats(dir: &Path, stem: &str) -> Result<(ClassStats, StatsMeta)> {
    let k1 = read_matrix_grmx(&dir.join(format!("{stem}_k1.grmx")))?;
    let k2 = read_matrix_grmx(&dir.join(format!("{stem}_k2.grmx")))?;
    let s = read_matrix_grmx(&dir.join(format!("{stem}_s.grmx")))?;
    let s = DVector::from_column_slice(s.as_slice());
    let meta: StatsMeta = read_json(&dir.join(format!("{stem}.json")))?;
    Ok((ClassStats::new_unchecked(k1, k2, s)?, meta))
}

/// JSON sidecar describing a persisted [`Dataset`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub class: ClassId,
    #[serde(rename = "N")]
    pub count: usize,
    pub grid: GridSpec,
    pub seed: u64,
    #[serde(default)]
    pub config_hash: String,
}

pub fn save_dataset(dir: &Path, stem: &str, data: &Dataset, grid: &GridSpec) -> Result<()> {
    save_dataset_with_hash(dir, stem, data, grid, "")
}

/// [`save_dataset`] with the producing config's hash recorded in the sidecar.
pub fn save_dataset_with_hash(
    dir: &Path,
    stem: &str,
    data: &Dataset,
    grid: &GridSpec,
    config_hash: &str,
) -> Result<()> {
    write_matrix_grmx(&dir.join(format!("{stem}.grmx")), &data.images)?;
    let meta = DatasetMeta {
        class: data.class,
        count: data.count(),
        grid: *grid,
        seed: data.seed,
        config_hash: config_hash.to_string(),
    };
    write_json(&dir.join(format!("{stem}.json")), &meta)
}

pub fn load_dataset(dir: &Path, stem: &str) -> Result<(Dataset, DatasetMeta)> {
    let images = read_matrix_grmx(&dir.join(format!("{stem}.grmx")))?;
    let meta: DatasetMeta = read_json(&dir.join(format!("{stem}.json")))?;
    Ok((
        Dataset {
            images,
            class: meta.class,
            seed: meta.seed,
        },
        meta,
    ))
}

/// JSON sidecar identifying a persisted subspace point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointMeta {
    pub config_hash: String,
    pub seed: u64,
    pub label: String,
    pub n: usize,
    pub p: usize,
}

/// Writes `<stem>.grmx` and `<stem>.json` under `dir`.
pub fn save_point(dir: &Path, stem: &str, point: &GrassmannPoint, meta: &PointMeta) -> Result<()> {
    write_matrix_grmx(&dir.join(format!("{stem}.grmx")), point.basis())?;
    write_json(&dir.join(format!("{stem}.json")), meta)
}

/// Loads a point saved by [`save_point`]; `path` is the `.grmx` file, with
/// the sidecar expected next to it.
pub fn load_point(path: &Path) -> Result<(GrassmannPoint, PointMeta)> {
    let basis = read_matrix_grmx(path)?;
    let sidecar = path.with_extension("json");
    let meta: PointMeta = read_json(&sidecar)?;
    let point = GrassmannPoint::from_basis(basis)?;
    Ok((point, meta))
}
