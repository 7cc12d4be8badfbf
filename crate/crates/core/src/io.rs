//! CSV and JSON artifacts.
//!
//! Every number is written as `{:.16e}` (17 significant digits), so a
//! written `f64` reads back bit-for-bit.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::balancing::{BalancingResiduals, BalancingResult, ErrorReport};
use crate::error::{Error, Result};
use crate::gramian::{Gramian, GramianKind, GramianMethod, PdReport};
use crate::scalar::Real;
use crate::sim::{Scheme, TimeGrid, Trajectory};
use crate::symmetry::SymmetryCertificate;

/// Version tag carried by every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

fn num<T: Real>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

fn parse_num<T: Real>(text: &str, line: usize) -> Result<T> {
    text.trim()
        .parse::<f64>()
        .map(T::lit)
        .map_err(|_| Error::Config(format!("line {line}: '{}' is not a number", text.trim())))
}

pub fn trajectory_to_csv<T: Real>(traj: &Trajectory<T>) -> String {
    let n = traj.states()[0].len();
    let m = traj.inputs()[0].len();
    let p = traj.outputs()[0].len();
    let mut out = String::from("t");
    for (prefix, count) in [("x", n), ("u", m), ("y", p)] {
        for i in 1..=count {
            let _ = write!(out, ",{prefix}{i}");
        }
    }
    out.push('\n');
    let times = traj.times();
    for (j, t) in times.iter().enumerate() {
        out.push_str(&num(*t));
        for v in [&traj.states()[j], &traj.inputs()[j], &traj.outputs()[j]] {
            for x in v.iter() {
                out.push(',');
                out.push_str(&num(*x));
            }
        }
        out.push('\n');
    }
    out
}

/// Column counts `(n, m, p)` from a `t,x1..,u1..,y1..` header.
fn parse_header(header: &str) -> Result<(usize, usize, usize)> {
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if cols.first() != Some(&"t") {
        return Err(Error::Config("trajectory CSV must start with a 't' column".into()));
    }
    let mut counts = [0usize; 3];
    let mut stage = 0;
    for col in &cols[1..] {
        let (prefix, index) = col.split_at(1.min(col.len()));
        let which = match prefix {
            "x" => 0,
            "u" => 1,
            "y" => 2,
            _ => return Err(Error::Config(format!("unexpected trajectory column '{col}'"))),
        };
        if which < stage || index.parse::<usize>().ok() != Some(counts[which] + 1) {
            return Err(Error::Config(format!("trajectory column '{col}' out of order")));
        }
        stage = which;
        counts[which] += 1;
    }
    Ok((counts[0], counts[1], counts[2]))
}

/// Reads a trajectory CSV. The grid is rebuilt from the first and last time
/// stamps; the input becomes a sampled hold of the `u` columns.
pub fn trajectory_from_csv<T: Real>(text: &str, model_id: &str, scheme: Scheme) -> Result<Trajectory<T>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Config("empty trajectory CSV".into()))?;
    let (n, m, p) = parse_header(header)?;
    let width = 1 + n + m + p;
    let mut times = Vec::new();
    let (mut xs, mut us, mut ys) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|c| parse_num::<T>(c, i + 2))
            .collect::<Result<Vec<T>>>()?;
        if row.len() != width {
            return Err(Error::Config(format!(
                "line {}: expected {width} columns, found {}",
                i + 2,
                row.len()
            )));
        }
        times.push(row[0]);
        xs.push(DVector::from_column_slice(&row[1..1 + n]));
        us.push(DVector::from_column_slice(&row[1 + n..1 + n + m]));
        ys.push(DVector::from_column_slice(&row[1 + n + m..]));
    }
    if times.len() < 2 {
        return Err(Error::Config("trajectory CSV needs at least two rows".into()));
    }
    let t0 = times[0];
    let tf = times[times.len() - 1];
    let dt = (tf - t0) / T::of_usize(times.len() - 1);
    let grid = TimeGrid::new(t0, tf, dt)?;
    Trajectory::from_samples(model_id, grid, scheme, xs, us, ys)
}

pub fn write_trajectory<T: Real>(path: impl AsRef<Path>, traj: &Trajectory<T>) -> Result<()> {
    std::fs::write(path, trajectory_to_csv(traj))?;
    Ok(())
}

pub fn read_trajectory<T: Real>(path: impl AsRef<Path>, scheme: Scheme) -> Result<Trajectory<T>> {
    let path = path.as_ref();
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
    trajectory_from_csv(&std::fs::read_to_string(path)?, id, scheme)
}

pub fn matrix_to_csv<T: Real>(m: &DMatrix<T>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&v| num(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv<T: Real>(text: &str) -> Result<DMatrix<T>> {
    let rows = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.split(',').map(|c| parse_num::<T>(c, i + 1)).collect::<Result<Vec<T>>>())
        .collect::<Result<Vec<_>>>()?;
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config("matrix CSV must be a non-empty rectangle".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn write_matrix<T: Real>(path: impl AsRef<Path>, m: &DMatrix<T>) -> Result<()> {
    std::fs::write(path, matrix_to_csv(m))?;
    Ok(())
}

pub fn read_matrix<T: Real>(path: impl AsRef<Path>) -> Result<DMatrix<T>> {
    matrix_from_csv(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramianMeta {
    pub schema_version: u32,
    pub kind: GramianKind,
    pub interval: (f64, f64),
    pub method: GramianMethod,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub base_id: String,
}

impl GramianMeta {
    pub fn of<T: Real>(g: &Gramian<T>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: g.kind,
            interval: (g.interval.0.as_f64(), g.interval.1.as_f64()),
            method: g.method,
            eigenvalues: g.eigenvalues().iter().map(|v| v.as_f64()).collect(),
            base_id: g.base_id.clone(),
        }
    }
}

/// Writes `<stem>.csv` and `<stem>.json`.
pub fn write_gramian<T: Real>(dir: impl AsRef<Path>, stem: &str, g: &Gramian<T>) -> Result<()> {
    let dir = dir.as_ref();
    write_matrix(dir.join(format!("{stem}.csv")), &g.w)?;
    write_json(dir.join(format!("{stem}.json")), &GramianMeta::of(g))
}

/// Reads a Gramian from its CSV and the sidecar next to it (same stem).
pub fn read_gramian<T: Real>(csv_path: impl AsRef<Path>) -> Result<Gramian<T>> {
    let csv_path = csv_path.as_ref();
    let w = read_matrix(csv_path)?;
    let meta: GramianMeta = read_json(csv_path.with_extension("json"))?;
    Gramian::assemble(
        w,
        meta.kind,
        (T::lit(meta.interval.0), T::lit(meta.interval.1)),
        meta.method,
        meta.base_id,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalancingMeta {
    pub schema_version: u32,
    pub sigma: Vec<f64>,
    pub effective_rank: usize,
    pub residuals: BalancingResiduals,
}

impl BalancingMeta {
    pub fn of<T: Real>(b: &BalancingResult<T>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            sigma: b.sigma.iter().map(|v| v.as_f64()).collect(),
            effective_rank: b.effective_rank,
            residuals: b.residuals,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateMeta {
    pub schema_version: u32,
    pub res_dyn: f64,
    pub res_out: f64,
    pub verdict: bool,
    #[serde(rename = "cond_S")]
    pub cond_s: f64,
    pub tau: f64,
    pub samples: usize,
}

impl CertificateMeta {
    pub fn of<T: Real>(c: &SymmetryCertificate<T>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            res_dyn: c.res_dyn,
            res_out: c.res_out,
            verdict: c.verdict,
            cond_s: c.cond_s,
            tau: c.tau,
            samples: c.sample_states.len(),
        }
    }
}

/// Adds `schema_version` to any serializable report.
#[derive(Debug, Clone, Serialize)]
pub struct Versioned<'a, R: Serialize> {
    pub schema_version: u32,
    #[serde(flatten)]
    pub report: &'a R,
}

pub fn versioned<R: Serialize>(report: &R) -> Versioned<'_, R> {
    Versioned {
        schema_version: SCHEMA_VERSION,
        report,
    }
}

pub fn pd_report_json(r: &PdReport) -> Result<String> {
    to_json(&versioned(r))
}

pub fn error_report_json(r: &ErrorReport) -> Result<String> {
    to_json(&versioned(r))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<S: Serialize + ?Sized>(value: &S) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<S: Serialize + ?Sized>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<D> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
