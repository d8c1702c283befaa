//! Hyperparameter sweeps: the Cartesian product of candidate values, an
//! optional seeded subsample, concurrent runs, and a ranking by one recorded
//! metric summary.
//!
//! Finished runs are appended to the results CSV as they complete and the
//! summary JSON is rewritten after each one, so an interrupted search leaves
//! every completed row behind.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::info;
use rand::seq::index;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{SnapshotDataset, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::metrics::{csv_err, format_float, ModelKind, RunStats};
use crate::rng;
use crate::statepred::{StatePred, StatePredConfig};
use crate::trajpred::{TrajPred, TrajPredConfig};

/// Hyperparameter name to one value or a list of candidates. For list-valued
/// fields (hidden layer sizes) only a list of lists is a candidate list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HypOptions(pub BTreeMap<String, Value>);

/// The swept values of one configuration.
pub type Assignment = BTreeMap<String, Value>;

const LIST_FIELDS: [&str; 2] = ["encoder_hidden_layers", "decoder_hidden_layers"];

/// Field names of a model's config, in declaration order.
pub fn config_fields(kind: ModelKind) -> Vec<String> {
    let v = match kind {
        ModelKind::StatePred => serde_json::to_value(StatePredConfig::new(1, 1)),
        ModelKind::TrajPred => serde_json::to_value(TrajPredConfig::new(1)),
    }
    .expect("configs serialize");
    match v {
        Value::Object(m) => m.keys().cloned().collect(),
        _ => unreachable!("configs serialize to objects"),
    }
}

fn candidates(name: &str, value: &Value) -> Result<Vec<Value>> {
    let list = match value {
        Value::Array(items) if LIST_FIELDS.contains(&name) => {
            if !items.is_empty() && items.iter().all(|v| v.is_array() || v.is_null()) {
                Some(items)
            } else {
                None
            }
        }
        Value::Array(items) => Some(items),
        _ => None,
    };
    match list {
        Some(items) if items.is_empty() => Err(Error::InvalidParams(format!(
            "hyperparameter `{name}` has an empty candidate list"
        ))),
        Some(items) => Ok(items.clone()),
        None => Ok(vec![value.clone()]),
    }
}

/// Every combination of candidates. Keys vary in sorted order with the first
/// key slowest, so the list is lexicographic in the candidate positions.
pub fn enumerate_configs(kind: ModelKind, opts: &HypOptions) -> Result<Vec<Assignment>> {
    let fields = config_fields(kind);
    let mut axes = Vec::with_capacity(opts.0.len());
    for (name, value) in &opts.0 {
        if name == "seed" {
            return Err(Error::InvalidParams(
                "`seed` cannot be swept; each run derives its own from the search seed".into(),
            ));
        }
        if !fields.contains(name) {
            return Err(Error::UnknownHyperparameter(name.clone()));
        }
        axes.push((name, candidates(name, value)?));
    }
    let mut out = vec![Assignment::new()];
    for (name, values) in axes {
        out = out
            .into_iter()
            .flat_map(|a| {
                values.iter().map(move |v| {
                    let mut a = a.clone();
                    a.insert(name.clone(), v.clone());
                    a
                })
            })
            .collect();
    }
    Ok(out)
}

/// Positions of the configurations to run, ascending: all of them when
/// `numruns >= total`, else a uniform seeded sample without replacement.
pub fn sample_runs(total: usize, numruns: usize, seed: u64) -> Vec<usize> {
    if numruns >= total {
        return (0..total).collect();
    }
    let mut picked = index::sample(&mut rng::seeded(seed), total, numruns).into_vec();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone)]
pub enum SearchData {
    Snapshots(SnapshotDataset),
    Trajectories(TrajectoryDataset),
}

impl SearchData {
    pub fn kind(&self) -> ModelKind {
        match self {
            SearchData::Snapshots(_) => ModelKind::StatePred,
            SearchData::Trajectories(_) => ModelKind::TrajPred,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchSpec {
    /// Fixed config fields shared by every run.
    pub base: Map<String, Value>,
    pub options: HypOptions,
    pub numruns: usize,
    pub sort_key: String,
    pub workers: usize,
    pub seed: u64,
}

/// Where results are persisted while the search runs.
#[derive(Debug, Clone)]
pub struct SearchFiles {
    pub results_csv: PathBuf,
    pub summary_json: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "error", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResultRow {
    /// Position in the full enumeration.
    pub config_id: usize,
    pub assignment: Assignment,
    /// The config the run used, or the attempted fields if it did not parse.
    pub config: Map<String, Value>,
    /// `{final|avg}_{metric}_{tr|va}`; empty for failed runs.
    pub summary: BTreeMap<String, f64>,
    pub runtime_s: f64,
    pub status: RunStatus,
}

impl SearchResultRow {
    pub fn value(&self, key: &str) -> f64 {
        self.summary.get(key).copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Completed runs, best first.
    pub ranked: Vec<SearchResultRow>,
    /// Failed runs by configuration id.
    pub failed: Vec<SearchResultRow>,
}

/// Completed rows ascending in `key`; NaN last, ties by configuration id.
pub fn rank(rows: &[SearchResultRow], key: &str) -> Vec<SearchResultRow> {
    let mut out: Vec<SearchResultRow> = rows
        .iter()
        .filter(|r| r.status == RunStatus::Completed)
        .cloned()
        .collect();
    out.sort_by(|a, b| {
        let (x, y) = (a.value(key), b.value(key));
        x.is_nan()
            .cmp(&y.is_nan())
            .then(x.total_cmp(&y))
            .then(a.config_id.cmp(&b.config_id))
    });
    out
}

pub fn results_header(kind: ModelKind) -> Vec<String> {
    let mut h = vec!["config_id".to_string(), "status".to_string()];
    h.extend(config_fields(kind));
    h.extend(RunStats::sort_keys());
    h.push("runtime_s".into());
    h
}

fn cell(v: Option<&Value>) -> String {
    match v {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(v) => v.to_string(),
    }
}

fn result_record(kind: ModelKind, row: &SearchResultRow) -> Vec<String> {
    let status = match &row.status {
        RunStatus::Completed => "completed".to_string(),
        RunStatus::Failed(e) => format!("failed: {e}"),
    };
    let mut rec = vec![row.config_id.to_string(), status];
    rec.extend(config_fields(kind).iter().map(|f| cell(row.config.get(f))));
    rec.extend(
        RunStats::sort_keys()
            .iter()
            .map(|k| match row.summary.get(k) {
                Some(&v) => format_float(v),
                None => String::new(),
            }),
    );
    rec.push(format!("{:.3}", row.runtime_s));
    rec
}

fn csv_line(rec: &[String]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(rec).map_err(csv_err)?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn resolve(kind: ModelKind, merged: &Map<String, Value>) -> Result<Map<String, Value>> {
    let v = Value::Object(merged.clone());
    let parsed = match kind {
        ModelKind::StatePred => {
            serde_json::from_value::<StatePredConfig>(v).and_then(serde_json::to_value)
        }
        ModelKind::TrajPred => {
            serde_json::from_value::<TrajPredConfig>(v).and_then(serde_json::to_value)
        }
    };
    match parsed {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => unreachable!("configs serialize to objects"),
        Err(e) => Err(Error::InvalidParams(e.to_string())),
    }
}

fn train(data: &SearchData, config: &Map<String, Value>) -> Result<RunStats> {
    let v = Value::Object(config.clone());
    let parse = |e: serde_json::Error| Error::InvalidParams(e.to_string());
    match data {
        SearchData::Snapshots(ds) => {
            let cfg: StatePredConfig = serde_json::from_value(v).map_err(parse)?;
            Ok(StatePred::fit(ds, cfg)?.stats)
        }
        SearchData::Trajectories(ds) => {
            let cfg: TrajPredConfig = serde_json::from_value(v).map_err(parse)?;
            Ok(TrajPred::fit(ds, cfg)?.stats)
        }
    }
}

/// Runs one configuration with seed `derive(search seed, config_id)`.
pub fn run_config(
    data: &SearchData,
    base: &Map<String, Value>,
    config_id: usize,
    assignment: &Assignment,
    seed: u64,
) -> SearchResultRow {
    let start = Instant::now();
    let mut merged = base.clone();
    merged.extend(assignment.iter().map(|(k, v)| (k.clone(), v.clone())));
    merged.insert("seed".into(), rng::derive(seed, config_id as u64).into());
    let outcome = resolve(data.kind(), &merged).and_then(|config| {
        let stats = train(data, &config)?;
        let summary = RunStats::sort_keys()
            .into_iter()
            .map(|k| {
                let v = stats.summary(&k).expect("sort keys are valid");
                (k, v)
            })
            .collect();
        Ok((config, summary))
    });
    let (config, summary, status) = match outcome {
        Ok((c, s)) => (c, s, RunStatus::Completed),
        Err(e) => (merged, BTreeMap::new(), RunStatus::Failed(e.to_string())),
    };
    SearchResultRow {
        config_id,
        assignment: assignment.clone(),
        config,
        summary,
        runtime_s: start.elapsed().as_secs_f64(),
        status,
    }
}

#[derive(Serialize)]
struct SummaryEntry<'a> {
    config_id: usize,
    value: f64,
    assignment: &'a Assignment,
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    sort_key: &'a str,
    planned: usize,
    completed: usize,
    failed: Vec<(usize, &'a str)>,
    ranking: Vec<SummaryEntry<'a>>,
}

fn write_summary(path: &Path, key: &str, planned: usize, rows: &[SearchResultRow]) -> Result<()> {
    let ranked = rank(rows, key);
    let doc = SummaryDoc {
        sort_key: key,
        planned,
        completed: ranked.len(),
        failed: rows
            .iter()
            .filter_map(|r| match &r.status {
                RunStatus::Failed(e) => Some((r.config_id, e.as_str())),
                RunStatus::Completed => None,
            })
            .collect(),
        ranking: ranked
            .iter()
            .map(|r| SummaryEntry {
                config_id: r.config_id,
                value: r.value(key),
                assignment: &r.assignment,
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::ParseError(e.to_string()))?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text + "\n")?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Sink {
    file: Option<File>,
    rows: Vec<SearchResultRow>,
}

/// Enumerates, samples and runs the search. Individual run failures are
/// recorded in their rows; only invalid options, an unknown sort key or an
/// I/O failure on the result files abort the search.
pub fn run_hyp_search(
    data: &SearchData,
    spec: &SearchSpec,
    files: Option<&SearchFiles>,
) -> Result<SearchOutcome> {
    let kind = data.kind();
    if !RunStats::sort_keys().contains(&spec.sort_key) {
        return Err(Error::UnknownSortKey(spec.sort_key.clone()));
    }
    if spec.numruns == 0 {
        return Err(Error::InvalidParams("numruns must be at least 1".into()));
    }
    let fields = config_fields(kind);
    if let Some(k) = spec.base.keys().find(|k| !fields.contains(k)) {
        return Err(Error::UnknownHyperparameter(k.clone()));
    }
    let configs = enumerate_configs(kind, &spec.options)?;
    let picked = sample_runs(configs.len(), spec.numruns, spec.seed);
    info!(
        "running {} of {} configurations",
        picked.len(),
        configs.len()
    );

    let file = match files {
        Some(f) => {
            let mut file = File::create(&f.results_csv)?;
            file.write_all(&csv_line(&results_header(kind))?)?;
            file.flush()?;
            write_summary(&f.summary_json, &spec.sort_key, picked.len(), &[])?;
            Some(file)
        }
        None => None,
    };
    let sink = Mutex::new(Sink {
        file,
        rows: Vec::with_capacity(picked.len()),
    });
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let workers = spec.workers.clamp(1, picked.len().max(1));

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failure.lock().expect("lock").is_some() {
                    return;
                }
                let Some(&id) = picked.get(next.fetch_add(1, Ordering::SeqCst)) else {
                    return;
                };
                let row = run_config(data, &spec.base, id, &configs[id], spec.seed);
                match &row.status {
                    RunStatus::Completed => info!(
                        "config {id}: {} = {}",
                        spec.sort_key,
                        format_float(row.value(&spec.sort_key))
                    ),
                    RunStatus::Failed(e) => info!("config {id} failed: {e}"),
                }
                let mut guard = sink.lock().expect("lock");
                let persisted = (|| -> Result<()> {
                    if let (Some(file), Some(f)) = (guard.file.as_mut(), files) {
                        file.write_all(&csv_line(&result_record(kind, &row))?)?;
                        file.flush()?;
                        guard.rows.push(row.clone());
                        write_summary(&f.summary_json, &spec.sort_key, picked.len(), &guard.rows)?;
                    } else {
                        guard.rows.push(row.clone());
                    }
                    Ok(())
                })();
                if let Err(e) = persisted {
                    failure.lock().expect("lock").get_or_insert(e);
                }
            });
        }
    });

    if let Some(e) = failure.into_inner().expect("lock") {
        return Err(e);
    }
    let mut rows = sink.into_inner().expect("lock").rows;
    rows.sort_by_key(|r| r.config_id);
    Ok(SearchOutcome {
        ranked: rank(&rows, &spec.sort_key),
        failed: rows
            .into_iter()
            .filter(|r| r.status != RunStatus::Completed)
            .collect(),
    })
}
