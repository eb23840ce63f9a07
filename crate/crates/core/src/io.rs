//! On-disk formats.
//!
//! * Ensemble manifest (JSON): `format_version`, `trajectory_files` (relative
//!   to the manifest), `state_dim`, `length`, optional `labels`, `meta`.
//! * CSV trajectory: one file per trajectory, rows are time steps, columns are
//!   variables, no header.
//! * Binary trajectory: `b"KCT1"`, then little-endian `u32` state_dim, `u32`
//!   length, `u32` trajectory count, then per trajectory the
//!   `state_dim x length` matrix in row-major order as little-endian `f64`.
//! * Spectrum and comparison documents (JSON).
//! * Distance matrices (CSV with a label row and label column).
//!
//! Every writer goes through [`write_atomic`]. Floats are written in shortest
//! round-trip form, so values read back bit-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::compare::{clamped_log10, ShuffleSummary, SpectrumComparison};
use crate::error::{Error, Result};
use crate::spectral::{Complex64, SpectralDecomposition};
use crate::trajectory::{Meta, TrajectoryEnsemble};

pub const FORMAT_VERSION: u64 = 1;
pub const BINARY_MAGIC: &[u8; 4] = b"KCT1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryFormat {
    Csv,
    Binary,
}

impl TrajectoryFormat {
    fn of(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => TrajectoryFormat::Csv,
            _ => TrajectoryFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub format_version: u64,
    pub trajectory_files: Vec<PathBuf>,
    pub state_dim: usize,
    pub length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub meta: Meta,
}

/// Parses a CSV trajectory (rows = time steps) into a `state_dim x length` matrix.
pub fn read_csv_trajectory(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = read_file(path)?;
    parse_csv_trajectory(&bytes, path)
}

fn parse_csv_trajectory(bytes: &[u8], path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut row = Vec::with_capacity(record.len());
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                message: format!("row {r}, column {c}: `{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    file: path.to_path_buf(),
                    row: r,
                    column: c,
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    let width = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || width == 0 {
        return Err(Error::Parse {
            file: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    if let Some(r) = rows.iter().position(|row| row.len() != width) {
        return Err(Error::DimensionMismatch {
            file: path.to_path_buf(),
            expected: format!("{width} columns"),
            actual: format!("{} columns on row {r}", rows[r].len()),
        });
    }
    Ok(DMatrix::from_fn(width, rows.len(), |var, t| rows[t][var]))
}

pub fn write_csv_trajectory(path: &Path, traj: &DMatrix<f64>) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for t in 0..traj.ncols() {
        out.write_record(traj.column(t).iter().map(|v| v.to_string()))
            .map_err(|e| Error::io(path, e.into()))?;
    }
    let bytes = out.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Decodes a `KCT1` file into its trajectories.
pub fn read_binary_trajectories(path: &Path) -> Result<Vec<DMatrix<f64>>> {
    let bytes = read_file(path)?;
    decode_binary(&bytes, path)
}

fn decode_binary(bytes: &[u8], path: &Path) -> Result<Vec<DMatrix<f64>>> {
    let bad = |message: String| Error::Parse {
        file: path.to_path_buf(),
        message,
    };
    if bytes.len() < 16 || &bytes[..4] != BINARY_MAGIC {
        return Err(bad("missing KCT1 header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (state_dim, length, count) = (word(0), word(1), word(2));
    let values = state_dim * length * count;
    let expected = 16 + 8 * values;
    if bytes.len() != expected {
        return Err(Error::DimensionMismatch {
            file: path.to_path_buf(),
            expected: format!("{expected} bytes for {count} x {state_dim} x {length}"),
            actual: format!("{} bytes", bytes.len()),
        });
    }
    let mut out = Vec::with_capacity(count);
    let mut chunks = bytes[16..].chunks_exact(8);
    for _ in 0..count {
        let mut traj = DMatrix::zeros(state_dim, length);
        for r in 0..state_dim {
            for t in 0..length {
                let v = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue {
                        file: path.to_path_buf(),
                        row: r,
                        column: t,
                    });
                }
                traj[(r, t)] = v;
            }
        }
        out.push(traj);
    }
    Ok(out)
}

pub fn encode_binary(trajectories: &[DMatrix<f64>]) -> Result<Vec<u8>> {
    let (state_dim, length) = trajectories.first().map_or((0, 0), DMatrix::shape);
    if trajectories.iter().any(|t| t.shape() != (state_dim, length)) {
        return Err(Error::InvalidEnsemble("binary payload needs equal shapes".into()));
    }
    let as_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::InvalidEnsemble(format!("{v} does not fit in u32")))
    };
    let mut bytes = Vec::with_capacity(16 + 8 * state_dim * length * trajectories.len());
    bytes.extend_from_slice(BINARY_MAGIC);
    for v in [state_dim, length, trajectories.len()] {
        bytes.extend_from_slice(&as_u32(v)?.to_le_bytes());
    }
    for traj in trajectories {
        for r in 0..state_dim {
            for t in 0..length {
                bytes.extend_from_slice(&traj[(r, t)].to_le_bytes());
            }
        }
    }
    Ok(bytes)
}

pub fn write_binary_trajectories(path: &Path, trajectories: &[DMatrix<f64>]) -> Result<()> {
    write_atomic(path, &encode_binary(trajectories)?)
}

fn check_version(version: u64) -> Result<()> {
    if version == FORMAT_VERSION {
        Ok(())
    } else {
        Err(Error::UnknownFormatVersion(version))
    }
}

/// Loads the ensemble described by a manifest, validating declared shapes.
pub fn load_ensemble(manifest_path: &Path) -> Result<TrajectoryEnsemble> {
    let text = read_file(manifest_path)?;
    let raw: Value = serde_json::from_slice(&text).map_err(|e| Error::Parse {
        file: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let version = raw
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| schema("format_version", "missing or not an unsigned integer"))?;
    check_version(version)?;
    let manifest: EnsembleManifest = serde_json::from_value(raw).map_err(|e| Error::Parse {
        file: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    if manifest.trajectory_files.is_empty() {
        return Err(schema("trajectory_files", "must list at least one file"));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut trajectories = Vec::new();
    for rel in &manifest.trajectory_files {
        let path = base.join(rel);
        let loaded = match TrajectoryFormat::of(&path) {
            TrajectoryFormat::Csv => vec![read_csv_trajectory(&path)?],
            TrajectoryFormat::Binary => read_binary_trajectories(&path)?,
        };
        for traj in loaded {
            if traj.shape() != (manifest.state_dim, manifest.length) {
                return Err(Error::DimensionMismatch {
                    file: path.clone(),
                    expected: format!(
                        "{} steps x {} variables",
                        manifest.length, manifest.state_dim
                    ),
                    actual: format!("{} steps x {} variables", traj.ncols(), traj.nrows()),
                });
            }
            trajectories.push(traj);
        }
    }
    TrajectoryEnsemble::with_labels(trajectories, manifest.labels, manifest.meta)
}

/// Writes `manifest.json` plus trajectory files into `dir` and returns the manifest path.
///
/// CSV output writes one `traj_NNN.csv` per trajectory; binary output writes a
/// single `trajectories.kct`.
pub fn save_ensemble(ens: &TrajectoryEnsemble, dir: &Path, format: TrajectoryFormat) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let trajectory_files = match format {
        TrajectoryFormat::Csv => {
            let mut names = Vec::with_capacity(ens.len());
            for (i, traj) in ens.trajectories().iter().enumerate() {
                let name = PathBuf::from(format!("traj_{i:03}.csv"));
                write_csv_trajectory(&dir.join(&name), traj)?;
                names.push(name);
            }
            names
        }
        TrajectoryFormat::Binary => {
            let name = PathBuf::from("trajectories.kct");
            write_binary_trajectories(&dir.join(&name), ens.trajectories())?;
            vec![name]
        }
    };
    let manifest = EnsembleManifest {
        format_version: FORMAT_VERSION,
        trajectory_files,
        state_dim: ens.state_dim(),
        length: ens.length(),
        labels: ens.labels().map(<[String]>::to_vec),
        meta: ens.meta().clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    write_atomic(&path, &to_json_bytes(&manifest)?)?;
    Ok(path)
}

fn schema(path: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| schema("$", e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComplexDoc {
    re: f64,
    im: f64,
}

impl From<Complex64> for ComplexDoc {
    fn from(c: Complex64) -> Self {
        Self { re: c.re, im: c.im }
    }
}

impl From<ComplexDoc> for Complex64 {
    fn from(c: ComplexDoc) -> Self {
        Complex64::new(c.re, c.im)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpectrumDoc {
    format_version: u64,
    eigenvalues: Vec<ComplexDoc>,
    residuals: Vec<f64>,
    rank: usize,
    delay: usize,
    window: Option<[usize; 2]>,
    amplitudes: Vec<Vec<ComplexDoc>>,
    /// One entry per mode, each of length `embed_dim`.
    modes: Vec<Vec<ComplexDoc>>,
    meta: Meta,
}

fn complex_vec(v: &[Complex64]) -> Vec<ComplexDoc> {
    v.iter().copied().map(ComplexDoc::from).collect()
}

/// Spectrum JSON document (compact, newline-terminated).
pub fn spectrum_to_json(dec: &SpectralDecomposition) -> Result<String> {
    let doc = SpectrumDoc {
        format_version: FORMAT_VERSION,
        eigenvalues: complex_vec(&dec.eigenvalues),
        residuals: dec.residuals.clone(),
        rank: dec.rank,
        delay: dec.delays,
        window: dec.window.map(|(a, b)| [a, b]),
        amplitudes: dec.amplitudes.iter().map(|a| complex_vec(a)).collect(),
        modes: dec
            .modes
            .column_iter()
            .map(|c| c.iter().copied().map(ComplexDoc::from).collect())
            .collect(),
        meta: dec.meta.clone(),
    };
    let mut text = serde_json::to_string(&doc).map_err(|e| schema("$", e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn spectrum_from_json(text: &str) -> Result<SpectralDecomposition> {
    let raw: Value = serde_json::from_str(text).map_err(|e| schema("$", e.to_string()))?;
    let version = raw
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| schema("format_version", "missing or not an unsigned integer"))?;
    check_version(version)?;
    let doc: SpectrumDoc = serde_json::from_value(raw).map_err(|e| schema("$", e.to_string()))?;
    let n = doc.eigenvalues.len();
    if doc.residuals.len() != n {
        return Err(schema(
            "residuals",
            format!("has {} entries for {n} eigenvalues", doc.residuals.len()),
        ));
    }
    if doc.modes.len() != n {
        return Err(schema("modes", format!("has {} entries for {n} eigenvalues", doc.modes.len())));
    }
    let embed_dim = doc.modes.first().map_or(0, Vec::len);
    if let Some(i) = doc.modes.iter().position(|m| m.len() != embed_dim) {
        return Err(schema(&format!("modes[{i}]"), format!("expected {embed_dim} entries")));
    }
    if let Some(i) = doc.amplitudes.iter().position(|a| a.len() != n) {
        return Err(schema(&format!("amplitudes[{i}]"), format!("expected {n} entries")));
    }
    if let Some(i) = doc.residuals.iter().position(|r| !(*r >= 0.0)) {
        return Err(schema(&format!("residuals[{i}]"), "must be non-negative"));
    }
    let modes = DMatrix::from_fn(embed_dim, n, |r, c| doc.modes[c][r].into());
    Ok(SpectralDecomposition {
        eigenvalues: doc.eigenvalues.into_iter().map(Complex64::from).collect(),
        modes,
        residuals: doc.residuals,
        amplitudes: doc
            .amplitudes
            .into_iter()
            .map(|a| a.into_iter().map(Complex64::from).collect())
            .collect(),
        rank: doc.rank,
        delays: doc.delay,
        window: doc.window.map(|[a, b]| (a, b)),
        meta: doc.meta,
    })
}

pub fn save_spectrum(dec: &SpectralDecomposition, path: &Path) -> Result<()> {
    write_atomic(path, spectrum_to_json(dec)?.as_bytes())
}

pub fn load_spectrum(path: &Path) -> Result<SpectralDecomposition> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        message: e.to_string(),
    })?;
    spectrum_from_json(&text)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShuffleDoc {
    n_shuff: usize,
    seed: u64,
    count_ge: usize,
    frac_ge: f64,
    distances: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComparisonDoc {
    format_version: u64,
    labels: [String; 2],
    distance: f64,
    assignment: Vec<usize>,
    shuffle: Option<ShuffleDoc>,
    meta: Meta,
}

pub fn comparison_to_json(cmp: &SpectrumComparison) -> Result<String> {
    let doc = ComparisonDoc {
        format_version: FORMAT_VERSION,
        labels: [cmp.labels.0.clone(), cmp.labels.1.clone()],
        distance: cmp.distance,
        assignment: cmp.assignment.clone(),
        shuffle: cmp.shuffle.as_ref().map(|s| ShuffleDoc {
            n_shuff: s.n_shuff,
            seed: s.seed,
            count_ge: s.count_ge,
            frac_ge: s.frac_ge,
            distances: s.distances.clone(),
        }),
        meta: cmp.meta.clone(),
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| schema("$", e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn comparison_from_json(text: &str) -> Result<SpectrumComparison> {
    let doc: ComparisonDoc = serde_json::from_str(text).map_err(|e| schema("$", e.to_string()))?;
    check_version(doc.format_version)?;
    let [a, b] = doc.labels;
    Ok(SpectrumComparison {
        distance: doc.distance,
        assignment: doc.assignment,
        shuffle: doc.shuffle.map(|s| ShuffleSummary {
            n_shuff: s.n_shuff,
            seed: s.seed,
            count_ge: s.count_ge,
            frac_ge: s.frac_ge,
            distances: s.distances,
        }),
        labels: (a, b),
        meta: doc.meta,
    })
}

pub fn save_comparison(cmp: &SpectrumComparison, path: &Path) -> Result<()> {
    write_atomic(path, comparison_to_json(cmp)?.as_bytes())
}

pub fn load_comparison(path: &Path) -> Result<SpectrumComparison> {
    let bytes = read_file(path)?;
    comparison_from_json(&String::from_utf8_lossy(&bytes))
}

/// Renders a labeled matrix as CSV: a header row and a leading label column.
pub fn matrix_to_csv(m: &DMatrix<f64>, labels: &[String], log10: bool) -> Result<String> {
    if labels.len() != m.nrows() || m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            file: PathBuf::from("<matrix>"),
            expected: format!("square matrix with {} labels", labels.len()),
            actual: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    let values = if log10 { m.map(clamped_log10) } else { m.clone() };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix export".into()));
    }
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let header = std::iter::once("window".to_string()).chain(labels.iter().cloned());
    let to_err = |e: csv::Error| Error::io("<matrix>", e.into());
    out.write_record(header).map_err(to_err)?;
    for (r, label) in labels.iter().enumerate() {
        let cells: Vec<String> = values.row(r).iter().map(|v| v.to_string()).collect();
        out.write_record(std::iter::once(label.clone()).chain(cells)).map_err(to_err)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::io("<matrix>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes a labeled matrix, optionally as `log10` with the 1e-16 floor.
pub fn export_matrix(m: &DMatrix<f64>, labels: &[String], path: &Path, log10: bool) -> Result<()> {
    write_atomic(path, matrix_to_csv(m, labels, log10)?.as_bytes())
}

/// Reads a matrix written by [`export_matrix`], returning labels and values.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let bytes = read_file(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            message: e.to_string(),
        })?
        .clone();
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = labels.len();
    let mut m = DMatrix::zeros(n, n);
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if r >= n || rec.len() != n + 1 {
            return Err(Error::DimensionMismatch {
                file: path.to_path_buf(),
                expected: format!("{n} x {} grid", n + 1),
                actual: format!("row {r} with {} fields", rec.len()),
            });
        }
        for c in 0..n {
            m[(r, c)] = rec[c + 1].parse().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                message: format!("row {r}, column {c}: not a number"),
            })?;
        }
    }
    Ok((labels, m))
}
