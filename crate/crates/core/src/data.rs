//! Datasets, index normalization, feature scaling and the on-disk formats.
//!
//! Snapshot CSV: header row, a `t` column, then one column per feature.
//! Trajectory NDJSON: one `{"traj": [[x0...], [x1...], ...]}` per line.
//! Trajectory directory: one CSV per trajectory (header row, no `t`
//! column), read in file-name order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{csv_err, format_float};
use crate::tensor::RMatrix;

/// Affine map from user indexes to internal ones: `i = (t - t0) / dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexMap {
    pub t0: f64,
    pub dt: f64,
}

impl IndexMap {
    /// Internal index of `t`, not rounded.
    pub fn map(&self, t: f64) -> f64 {
        (t - self.t0) / self.dt
    }

    pub fn unmap(&self, i: f64) -> f64 {
        self.t0 + i * self.dt
    }
}

/// Internal index of a new user index; fails when no map was established.
pub fn map_new_index(map: Option<&IndexMap>, t: f64) -> Result<f64> {
    map.map(|m| m.map(t)).ok_or(Error::NoIndexMap)
}

/// `t0 = min`, `dt` = median gap of the sorted indexes, and each index
/// rounded (half away from zero) onto that grid. Returned indexes follow
/// the input order.
pub fn normalize_indexes(t: &[f64]) -> Result<(IndexMap, Vec<i64>)> {
    if let Some(k) = t.iter().position(|x| !x.is_finite()) {
        return Err(Error::DegenerateIndexes(format!("index {k} is not finite")));
    }
    let mut sorted = t.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::DegenerateIndexes("duplicate index values".into()));
    }
    if sorted.len() < 2 {
        return Err(Error::DegenerateIndexes(
            "at least two distinct indexes are required".into(),
        ));
    }
    let mut gaps: Vec<f64> = sorted.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let n = gaps.len();
    let dt = if n % 2 == 1 {
        gaps[n / 2]
    } else {
        0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
    };
    let map = IndexMap { t0: sorted[0], dt };
    let idx: Vec<i64> = t.iter().map(|&x| map.map(x).round() as i64).collect();
    let mut check = idx.clone();
    check.sort_unstable();
    if let Some(w) = check.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DegenerateIndexes(format!(
            "several indexes round to internal index {}",
            w[0]
        )));
    }
    Ok((map, idx))
}

/// States as rows, with their user indexes.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshots {
    /// `n x d`, one snapshot per row.
    pub x: RMatrix,
    pub t: Vec<f64>,
}

impl Snapshots {
    pub fn new(x: RMatrix, t: Vec<f64>) -> Result<Self> {
        if x.rows() != t.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} snapshots but {} indexes",
                x.rows(),
                t.len()
            )));
        }
        if let Some((row, col)) = x.first_non_finite() {
            return Err(Error::NonFiniteValue { row, col });
        }
        Ok(Snapshots { x, t })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Rows reordered by increasing index.
    pub fn sorted(&self) -> Snapshots {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.t[a].total_cmp(&self.t[b]));
        Snapshots {
            x: self.x.select_rows(&order),
            t: order.iter().map(|&k| self.t[k]).collect(),
        }
    }
}

/// Training snapshots (sorted by index) with optional validation and test
/// snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotDataset {
    pub train: Snapshots,
    pub val: Option<Snapshots>,
    pub test: Option<Snapshots>,
    pub index_map: IndexMap,
    /// Internal index of each training row.
    pub train_indexes: Vec<i64>,
}

impl SnapshotDataset {
    pub fn new(train: Snapshots, val: Option<Snapshots>, test: Option<Snapshots>) -> Result<Self> {
        let train = train.sorted();
        let (index_map, train_indexes) = normalize_indexes(&train.t)?;
        let d = train.dim();
        for (name, split) in [("validation", &val), ("test", &test)] {
            if let Some(s) = split {
                if s.dim() != d {
                    return Err(Error::ShapeMismatch(format!(
                        "{name} snapshots have {} features, training has {d}",
                        s.dim()
                    )));
                }
            }
        }
        Ok(SnapshotDataset {
            train,
            val: val.filter(|s| !s.is_empty()),
            test: test.filter(|s| !s.is_empty()),
            index_map,
            train_indexes,
        })
    }

    pub fn dim(&self) -> usize {
        self.train.dim()
    }
}

/// Equal-length trajectories, each `(m + 1) x d` with steps as rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    trajs: Vec<RMatrix>,
}

impl Trajectories {
    pub fn new(trajs: Vec<RMatrix>) -> Result<Self> {
        if let Some(first) = trajs.first() {
            let shape = first.shape();
            if shape.0 < 2 {
                return Err(Error::RaggedTrajectories(
                    "trajectories need at least two states".into(),
                ));
            }
            for (k, tr) in trajs.iter().enumerate() {
                if tr.shape() != shape {
                    return Err(Error::RaggedTrajectories(format!(
                        "trajectory {k} is {}x{}, trajectory 0 is {}x{}",
                        tr.rows(),
                        tr.cols(),
                        shape.0,
                        shape.1
                    )));
                }
                if let Some((row, col)) = tr.first_non_finite() {
                    return Err(Error::NonFiniteValue { row, col });
                }
            }
        }
        Ok(Trajectories { trajs })
    }

    pub fn len(&self) -> usize {
        self.trajs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajs.is_empty()
    }

    pub fn as_slice(&self) -> &[RMatrix] {
        &self.trajs
    }

    /// Number of states per trajectory, `m + 1`.
    pub fn num_states(&self) -> usize {
        self.trajs.first().map_or(0, RMatrix::rows)
    }

    pub fn dim(&self) -> usize {
        self.trajs.first().map_or(0, RMatrix::cols)
    }

    /// Splits off consecutive blocks of the given sizes.
    pub fn split(&self, sizes: &[usize]) -> Result<Vec<Trajectories>> {
        if sizes.iter().sum::<usize>() > self.len() {
            return Err(Error::InvalidParams(format!(
                "split sizes {sizes:?} exceed {} trajectories",
                self.len()
            )));
        }
        let mut out = Vec::new();
        let mut start = 0;
        for &n in sizes {
            out.push(Trajectories {
                trajs: self.trajs[start..start + n].to_vec(),
            });
            start += n;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub train: Trajectories,
    pub val: Option<Trajectories>,
    pub test: Option<Trajectories>,
}

impl TrajectoryDataset {
    pub fn new(
        train: Trajectories,
        val: Option<Trajectories>,
        test: Option<Trajectories>,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::RaggedTrajectories("no training trajectories".into()));
        }
        let shape = (train.num_states(), train.dim());
        for (name, split) in [("validation", &val), ("test", &test)] {
            if let Some(s) = split {
                if !s.is_empty() && (s.num_states(), s.dim()) != shape {
                    return Err(Error::RaggedTrajectories(format!(
                        "{name} trajectories are {}x{}, training trajectories {}x{}",
                        s.num_states(),
                        s.dim(),
                        shape.0,
                        shape.1
                    )));
                }
            }
        }
        Ok(TrajectoryDataset {
            train,
            val: val.filter(|s| !s.is_empty()),
            test: test.filter(|s| !s.is_empty()),
        })
    }

    pub fn dim(&self) -> usize {
        self.train.dim()
    }
}

/// Per-feature min-max scaling onto `[-1, 1]`: `(x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn identity(d: usize) -> Self {
        Scaler {
            shift: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    /// Fitted on the rows of `x`; constant features get scale 1.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a RMatrix>) -> Result<Self> {
        let mut lo: Vec<f64> = Vec::new();
        let mut hi: Vec<f64> = Vec::new();
        for m in rows {
            if lo.is_empty() {
                lo = vec![f64::INFINITY; m.cols()];
                hi = vec![f64::NEG_INFINITY; m.cols()];
            }
            if m.cols() != lo.len() {
                return Err(Error::ShapeMismatch("scaler fit on mixed widths".into()));
            }
            for r in 0..m.rows() {
                for (c, &v) in m.row(r).iter().enumerate() {
                    lo[c] = lo[c].min(v);
                    hi[c] = hi[c].max(v);
                }
            }
        }
        let (shift, scale) = lo
            .iter()
            .zip(&hi)
            .map(|(&a, &b)| {
                let half = 0.5 * (b - a);
                if half > 0.0 && half.is_finite() {
                    (0.5 * (a + b), half)
                } else {
                    (if a.is_finite() { a } else { 0.0 }, 1.0)
                }
            })
            .unzip();
        Ok(Scaler { shift, scale })
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    fn check(&self, x: &RMatrix) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "scaler for {} features applied to {}",
                self.dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Rows of `x` are states.
    pub fn transform(&self, x: &RMatrix) -> Result<RMatrix> {
        self.check(x)?;
        Ok(RMatrix::from_fn(x.rows(), x.cols(), |r, c| {
            (x[(r, c)] - self.shift[c]) / self.scale[c]
        }))
    }

    pub fn inverse(&self, x: &RMatrix) -> Result<RMatrix> {
        self.check(x)?;
        Ok(RMatrix::from_fn(x.rows(), x.cols(), |r, c| {
            x[(r, c)] * self.scale[c] + self.shift[c]
        }))
    }
}

/// On-disk layout of a data file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Csv,
    Ndjson,
    CsvDir,
}

impl DataFormat {
    /// Directories are per-trajectory CSVs, `.ndjson`/`.jsonl` are NDJSON,
    /// anything else CSV.
    pub fn detect(path: &Path) -> DataFormat {
        if path.is_dir() {
            return DataFormat::CsvDir;
        }
        match path.extension().and_then(|e| e.to_str()) {
            Some("ndjson") | Some("jsonl") => DataFormat::Ndjson,
            _ => DataFormat::Csv,
        }
    }
}

fn parse_cell(text: &str, row: usize, col: usize) -> Result<f64> {
    let v: f64 = text.trim().parse().map_err(|_| {
        Error::ParseError(format!("row {row}, column {col}: `{text}` is not a number"))
    })?;
    if !v.is_finite() {
        return Err(Error::NonFiniteValue { row, col });
    }
    Ok(v)
}

/// Reads a numeric CSV with a header row. Returns the header and the rows.
fn read_numeric_csv<R: Read>(r: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let vals = rec
            .iter()
            .enumerate()
            .map(|(col, cell)| parse_cell(cell, row, col))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(vals);
    }
    Ok((header, rows))
}

fn rows_to_matrix(rows: &[Vec<f64>], skip: usize, width: usize) -> Result<RMatrix> {
    let data: Vec<f64> = rows
        .iter()
        .flat_map(|r| r[skip..].iter().copied())
        .collect();
    RMatrix::from_vec(rows.len(), width, data)
}

pub fn read_snapshots_csv<R: Read>(r: R) -> Result<Snapshots> {
    let (header, rows) = read_numeric_csv(r)?;
    if header.first().map(String::as_str) != Some("t") {
        return Err(Error::ParseError(
            "snapshot CSV must start with a `t` column".into(),
        ));
    }
    if header.len() < 2 {
        return Err(Error::ParseError(
            "snapshot CSV has no feature columns".into(),
        ));
    }
    let t = rows.iter().map(|r| r[0]).collect();
    let x = rows_to_matrix(&rows, 1, header.len() - 1)?;
    Snapshots::new(x, t)
}

pub fn load_snapshots(path: &Path) -> Result<Snapshots> {
    let f = fs::File::open(path)?;
    read_snapshots_csv(BufReader::new(f)).map_err(|e| with_path(e, path))
}

fn feature_header(d: usize) -> impl Iterator<Item = String> {
    (0..d).map(|k| format!("f{k}"))
}

pub fn write_snapshots_csv<W: Write>(s: &Snapshots, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(feature_header(s.dim()))
        .collect();
    wtr.write_record(&header).map_err(csv_err)?;
    for (r, t) in s.t.iter().enumerate() {
        let row: Vec<String> = std::iter::once(format_float(*t))
            .chain(s.x.row(r).iter().map(|&v| format_float(v)))
            .collect();
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_snapshots(s: &Snapshots, path: &Path) -> Result<()> {
    write_snapshots_csv(s, fs::File::create(path)?)
}

/// States as the rows of a CSV with one header column per feature.
pub fn read_states_csv<R: Read>(r: R) -> Result<RMatrix> {
    let (header, rows) = read_numeric_csv(r)?;
    if header.first().map(String::as_str) == Some("t") {
        return Err(Error::ParseError(
            "state CSVs must not have a `t` column".into(),
        ));
    }
    if header.is_empty() {
        return Err(Error::ParseError("state CSV has no columns".into()));
    }
    rows_to_matrix(&rows, 0, header.len())
}

pub fn load_states(path: &Path) -> Result<RMatrix> {
    read_states_csv(fs::File::open(path)?).map_err(|e| with_path(e, path))
}

pub fn write_states_csv<W: Write>(x: &RMatrix, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(feature_header(x.cols()))
        .map_err(csv_err)?;
    for r in 0..x.rows() {
        wtr.write_record(x.row(r).iter().map(|&v| format_float(v)))
            .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TrajRecord {
    traj: Vec<Vec<f64>>,
}

pub fn read_trajectories_ndjson<R: Read>(r: R) -> Result<Trajectories> {
    let mut trajs = Vec::new();
    for (line_no, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajRecord = serde_json::from_str(&line)
            .map_err(|e| Error::ParseError(format!("line {}: {e}", line_no + 1)))?;
        let d = rec.traj.first().map_or(0, Vec::len);
        if rec.traj.iter().any(|s| s.len() != d) {
            return Err(Error::RaggedTrajectories(format!(
                "line {}: states of different widths",
                line_no + 1
            )));
        }
        let data: Vec<f64> = rec.traj.into_iter().flatten().collect();
        let rows = data.len().checked_div(d).unwrap_or(0);
        trajs.push(RMatrix::from_vec(rows, d, data)?);
    }
    Trajectories::new(trajs)
}

pub fn write_trajectories_ndjson<W: Write>(t: &Trajectories, mut w: W) -> Result<()> {
    for tr in t.as_slice() {
        write_trajectory_line(tr, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

/// One NDJSON record with states as rows of `tr`.
pub fn write_trajectory_line<W: Write>(tr: &RMatrix, w: &mut W) -> Result<()> {
    let rec = TrajRecord {
        traj: (0..tr.rows()).map(|r| tr.row(r).to_vec()).collect(),
    };
    serde_json::to_writer(&mut *w, &rec).map_err(|e| Error::ParseError(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

fn read_trajectory_dir(dir: &Path) -> Result<Trajectories> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("csv"))
        .collect();
    files.sort();
    let mut trajs = Vec::new();
    for f in files {
        let (header, rows) =
            read_numeric_csv(BufReader::new(fs::File::open(&f)?)).map_err(|e| with_path(e, &f))?;
        if header.first().map(String::as_str) == Some("t") {
            return Err(with_path(
                Error::ParseError("trajectory CSVs must not have a `t` column".into()),
                &f,
            ));
        }
        trajs.push(rows_to_matrix(&rows, 0, header.len())?);
    }
    Trajectories::new(trajs)
}

pub fn load_trajectories(path: &Path) -> Result<Trajectories> {
    match DataFormat::detect(path) {
        DataFormat::CsvDir => read_trajectory_dir(path),
        _ => read_trajectories_ndjson(fs::File::open(path)?).map_err(|e| with_path(e, path)),
    }
}

pub fn save_trajectories(t: &Trajectories, path: &Path) -> Result<()> {
    write_trajectories_ndjson(t, std::io::BufWriter::new(fs::File::create(path)?))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::ParseError(m) => Error::ParseError(format!("{}: {m}", path.display())),
        other => other,
    }
}
