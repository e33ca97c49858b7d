//! Dataset representation, CSV ingestion, arm partitioning and seed derivation.
//!
//! The wire format is a headered CSV with columns `t,y,x1,...,xd`. Values are
//! written with Rust's shortest round-trip float formatting, so
//! `load_csv(write_csv(d)) == d` bit for bit.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PelError, Result};

/// Treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    Treated,
    Control,
}

impl Arm {
    pub fn flag(self) -> u8 {
        match self {
            Arm::Treated => 1,
            Arm::Control => 0,
        }
    }
}

/// Observed sample: covariates, treatment flags and outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    t: Vec<u8>,
    y: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset, validating shape, flags and finiteness.
    pub fn new(x: DMatrix<f64>, t: Vec<u8>, y: Vec<f64>) -> Result<Self> {
        let n = t.len();
        if y.len() != n || x.nrows() != n {
            return Err(PelError::InvalidData(format!(
                "length mismatch: t has {}, y has {}, x has {} rows",
                n,
                y.len(),
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(PelError::InvalidData(
                "at least one covariate is required".into(),
            ));
        }
        if n < 2 {
            return Err(PelError::InvalidData(format!("need n >= 2, got {n}")));
        }
        if let Some(j) = t.iter().position(|&v| v > 1) {
            return Err(PelError::InvalidData(format!(
                "treatment must be 0 or 1 at row {}",
                j + 1
            )));
        }
        if let Some(j) = y.iter().position(|v| !v.is_finite()) {
            return Err(PelError::InvalidData(format!(
                "non-finite outcome at row {}",
                j + 1
            )));
        }
        for j in 0..n {
            if x.row(j).iter().any(|v| !v.is_finite()) {
                return Err(PelError::InvalidData(format!(
                    "non-finite covariate at row {}",
                    j + 1
                )));
            }
        }
        let n1 = t.iter().filter(|&&v| v == 1).count();
        if n1 == 0 || n1 == n {
            return Err(PelError::DegenerateDesign);
        }
        Ok(Self { x, t, y })
    }

    /// Builds from row-major covariate rows.
    pub fn from_rows(rows: &[Vec<f64>], t: Vec<u8>, y: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(PelError::InvalidData("ragged covariate rows".into()));
        }
        let x = DMatrix::from_fn(rows.len(), d, |i, k| rows[i][k]);
        Self::new(x, t, y)
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    /// Number of covariates (excluding the intercept).
    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|&&v| v == 1).count()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn t(&self) -> &[u8] {
        &self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn is_treated(&self, j: usize) -> bool {
        self.t[j] == 1
    }

    /// Design row `(1, x_j[cols])`.
    pub fn design_row(&self, j: usize, cols: &ColumnSet) -> Vec<f64> {
        let mut row = Vec::with_capacity(cols.len(self.d()) + 1);
        row.push(1.0);
        match cols {
            ColumnSet::All => row.extend(self.x.row(j).iter().copied()),
            ColumnSet::Subset(idx) => row.extend(idx.iter().map(|&k| self.x[(j, k)])),
        }
        row
    }

    /// Design matrix `[1 | x[cols]]` over all rows.
    pub fn design_matrix(&self, cols: &ColumnSet) -> DMatrix<f64> {
        let p = cols.len(self.d()) + 1;
        let mut m = DMatrix::zeros(self.n(), p);
        for j in 0..self.n() {
            m[(j, 0)] = 1.0;
            match cols {
                ColumnSet::All => {
                    for k in 0..self.d() {
                        m[(j, k + 1)] = self.x[(j, k)];
                    }
                }
                ColumnSet::Subset(idx) => {
                    for (c, &k) in idx.iter().enumerate() {
                        m[(j, c + 1)] = self.x[(j, k)];
                    }
                }
            }
        }
        m
    }

    /// Rows selected by `indices`, in that order (duplicates allowed).
    /// Unlike [`Dataset::new`] this does not require both arms to be present.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let x = DMatrix::from_fn(indices.len(), self.d(), |i, k| self.x[(indices[i], k)]);
        let t = indices.iter().map(|&j| self.t[j]).collect();
        let y = indices.iter().map(|&j| self.y[j]).collect();
        Self::new(x, t, y)
    }
}

/// Which covariates enter a working model.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ColumnSet {
    #[default]
    All,
    /// Zero-based covariate indices.
    Subset(Vec<usize>),
}

impl ColumnSet {
    /// All covariates except the zero-based index `k`.
    pub fn excluding(d: usize, k: usize) -> Self {
        ColumnSet::Subset((0..d).filter(|&c| c != k).collect())
    }

    pub fn len(&self, d: usize) -> usize {
        match self {
            ColumnSet::All => d,
            ColumnSet::Subset(idx) => idx.len(),
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if let ColumnSet::Subset(idx) = self {
            if let Some(&k) = idx.iter().find(|&&k| k >= d) {
                return Err(PelError::Usage(format!(
                    "covariate index {k} out of range (d = {d})"
                )));
            }
        }
        Ok(())
    }
}

/// Indices of one arm, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupView {
    pub arm: Arm,
    pub indices: Vec<usize>,
}

impl GroupView {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Partitions the sample into (treated, control).
pub fn split_groups(d: &Dataset) -> Result<(GroupView, GroupView)> {
    split_flags(d.t())
}

pub(crate) fn split_flags(t: &[u8]) -> Result<(GroupView, GroupView)> {
    let mut treated = Vec::new();
    let mut control = Vec::new();
    for (j, &tj) in t.iter().enumerate() {
        if tj == 1 {
            treated.push(j);
        } else {
            control.push(j);
        }
    }
    if treated.is_empty() || control.is_empty() {
        return Err(PelError::DegenerateDesign);
    }
    Ok((
        GroupView {
            arm: Arm::Treated,
            indices: treated,
        },
        GroupView {
            arm: Arm::Control,
            indices: control,
        },
    ))
}

/// Reads a dataset from a `t,y,x1,...,xd` CSV file.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| PelError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    read_csv(file)
}

/// Parses the CSV wire format from any reader.
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| PelError::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    check_header(&header)?;
    let d = header.len() - 2;

    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // header is row 1
        let row = i + 2;
        let rec = rec.map_err(|e| PelError::Parse {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != d + 2 {
            return Err(PelError::Parse {
                row,
                message: format!("expected {} fields, found {}", d + 2, rec.len()),
            });
        }
        let tv = match &rec[0] {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                let ok = other.parse::<f64>().ok().filter(|v| *v == 0.0 || *v == 1.0);
                match ok {
                    Some(v) => v as u8,
                    None => {
                        return Err(PelError::Parse {
                            row,
                            message: format!("treatment must be 0 or 1 at row {row}"),
                        })
                    }
                }
            }
        };
        t.push(tv);
        y.push(parse_cell(&rec[1], row, "y")?);
        let mut xr = Vec::with_capacity(d);
        for k in 0..d {
            xr.push(parse_cell(&rec[k + 2], row, &header[k + 2])?);
        }
        rows.push(xr);
    }
    Dataset::from_rows(&rows, t, y)
}

fn check_header(h: &csv::StringRecord) -> Result<()> {
    let bad = |m: String| Err(PelError::Parse { row: 1, message: m });
    if h.len() < 3 {
        return bad(format!(
            "header needs t,y and at least one covariate, found {} columns",
            h.len()
        ));
    }
    if &h[0] != "t" || &h[1] != "y" {
        return bad(format!(
            "header must start with t,y; found {},{}",
            &h[0], &h[1]
        ));
    }
    for (k, name) in h.iter().skip(2).enumerate() {
        let expect = format!("x{}", k + 1);
        if name != expect {
            return bad(format!(
                "malformed header: expected column {expect}, found {name}"
            ));
        }
    }
    Ok(())
}

fn parse_cell(s: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| PelError::Parse {
        row,
        message: format!("non-numeric value {s:?} in column {col}"),
    })?;
    if !v.is_finite() {
        return Err(PelError::Parse {
            row,
            message: format!("non-finite value in column {col}"),
        });
    }
    Ok(v)
}

/// Serializes a dataset in the CSV wire format.
pub fn write_csv<W: std::io::Write>(d: &Dataset, writer: W) -> Result<()> {
    let io = |e: csv::Error| PelError::Io {
        path: "<writer>".into(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string(), "y".to_string()];
    header.extend((1..=d.d()).map(|k| format!("x{k}")));
    w.write_record(&header).map_err(io)?;
    for j in 0..d.n() {
        let mut rec = vec![d.t[j].to_string(), format!("{}", d.y[j])];
        rec.extend(d.x.row(j).iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| PelError::Io {
        path: "<writer>".into(),
        reason: e.to_string(),
    })?;
    Ok(())
}

/// Writes the dataset to a file path.
pub fn save_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| PelError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    write_csv(d, std::io::BufWriter::new(file))
}

/// Master seed plus stream index (simulation replicate or bootstrap draw).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master: u64,
    pub stream: u64,
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer; a bijection on `u64`.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed `mix64(mix64(master) + (stream + 1) * GOLDEN_GAMMA)`.
///
/// Both `mix64` and the odd-multiplier affine step are bijections modulo
/// 2^64, so for a fixed master the map is injective in the stream, and for a
/// fixed stream it is injective in the master.
pub fn derive_seed(s: SeedSpec) -> u64 {
    mix64(mix64(s.master).wrapping_add(s.stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Units whose fitted propensity lies outside `[eps, 1 - eps]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub eps: f64,
    pub flagged: Vec<usize>,
}

impl PositivityReport {
    pub fn count(&self) -> usize {
        self.flagged.len()
    }
}

/// Flags every unit with `tau_j < eps` or `tau_j > 1 - eps`. Never fails.
pub fn positivity_check(tau_hat: &[f64], eps: f64) -> PositivityReport {
    let flagged = tau_hat
        .iter()
        .enumerate()
        .filter(|(_, &v)| v < eps || v > 1.0 - eps)
        .map(|(j, _)| j)
        .collect();
    PositivityReport { eps, flagged }
}

pub const DEFAULT_POSITIVITY_EPS: f64 = 0.01;
