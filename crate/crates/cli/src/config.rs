//! Run configuration files (TOML). Relative paths resolve against the
//! directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use koopman_core::data::{load_snapshots, load_trajectories, SnapshotDataset, TrajectoryDataset};
use koopman_core::hypsearch::{HypOptions, SearchData};
use koopman_core::ModelKind;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::{input, Failure};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: PathBuf,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

fn default_sort_key() -> String {
    "avg_pred_anae_va".into()
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    /// Configurations to sample; all of them when absent.
    pub numruns: Option<usize>,
    #[serde(default = "default_sort_key")]
    pub sort_key: String,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub options: HypOptions,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: ModelKind,
    output_dir: Option<PathBuf>,
    data: DataPaths,
    #[serde(default)]
    model: toml::Table,
    hypsearch: Option<SearchSection>,
}

#[derive(Debug)]
pub struct RunConfig {
    pub kind: ModelKind,
    pub output_dir: PathBuf,
    pub data: DataPaths,
    /// Model hyperparameters as given; validated by the model's config type.
    pub model: Map<String, Value>,
    pub hypsearch: Option<SearchSection>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::user(format!("cannot read {}: {e}", path.display())))?;
        let raw: RawConfig =
            toml::from_str(&text).map_err(|e| Failure::user(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rel = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let model = match serde_json::to_value(&raw.model) {
            Ok(Value::Object(m)) => m,
            _ => return Err(Failure::user("[model] must be a table")),
        };
        let data = DataPaths {
            train: rel(raw.data.train),
            val: raw.data.val.map(rel),
            test: raw.data.test.map(rel),
        };
        for p in [Some(&data.train), data.val.as_ref(), data.test.as_ref()]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Failure::user(format!(
                    "data file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(RunConfig {
            kind: raw.kind,
            output_dir: rel(raw.output_dir.unwrap_or_else(|| PathBuf::from("run"))),
            data,
            model,
            hypsearch: raw.hypsearch,
        })
    }

    /// Overrides the model seed, as from `--seed` or `KOOPMAN_SEED`.
    pub fn set_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.model.insert("seed".into(), s.into());
        }
    }

    pub fn seed(&self) -> u64 {
        self.model.get("seed").and_then(Value::as_u64).unwrap_or(0)
    }

    pub fn typed<T: serde::de::DeserializeOwned>(&self) -> Result<T, Failure> {
        serde_json::from_value(Value::Object(self.model.clone()))
            .map_err(|e| Failure::user(format!("[model]: {e}")))
    }

    pub fn snapshots(&self) -> Result<SnapshotDataset, Failure> {
        let load = |p: &Option<PathBuf>| p.as_deref().map(load_snapshots).transpose();
        SnapshotDataset::new(
            load_snapshots(&self.data.train)?,
            load(&self.data.val)?,
            load(&self.data.test)?,
        )
        .map_err(input)
    }

    pub fn trajectories(&self) -> Result<TrajectoryDataset, Failure> {
        let load = |p: &Option<PathBuf>| p.as_deref().map(load_trajectories).transpose();
        TrajectoryDataset::new(
            load_trajectories(&self.data.train)?,
            load(&self.data.val)?,
            load(&self.data.test)?,
        )
        .map_err(input)
    }

    pub fn search_data(&self) -> Result<SearchData, Failure> {
        Ok(match self.kind {
            ModelKind::StatePred => SearchData::Snapshots(self.snapshots()?),
            ModelKind::TrajPred => SearchData::Trajectories(self.trajectories()?),
        })
    }
}
