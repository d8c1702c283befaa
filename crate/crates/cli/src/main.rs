//! `koopman`: fit, query and sweep deep Koopman autoencoders from the shell.
//!
//! Exit codes: 0 success, 2 user or configuration error, 3 runtime or
//! training failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod gen;
mod plot;

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use koopman_core::checkpoint::{self, Model};
use koopman_core::data::{load_states, write_snapshots_csv, write_trajectory_line, Snapshots};
use koopman_core::hypsearch::{run_hyp_search, SearchFiles, SearchSpec};
use koopman_core::{ModelKind, RunStats, StatePred, StatePredConfig, TrajPred, TrajPredConfig};
use log::{info, LevelFilter};
use serde_json::{json, Value};

use config::RunConfig;

/// An error with its exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn user(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<koopman_core::Error> for Failure {
    fn from(e: koopman_core::Error) -> Self {
        if e.is_user_error() {
            Failure::user(e.to_string())
        } else {
            Failure::runtime(e.to_string())
        }
    }
}

/// Any failure caused directly by the user's inputs, such as shape errors in
/// data files.
pub(crate) fn input(e: koopman_core::Error) -> Failure {
    Failure::user(e.to_string())
}

/// Output files are the tool's own; failing to write them is not a user error.
pub(crate) fn io_out(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::runtime(format!("cannot write {}: {e}", path.display()))
}

pub(crate) fn out_err(path: &Path) -> impl Fn(koopman_core::Error) -> Failure + '_ {
    move |e| Failure::runtime(format!("cannot write {}: {e}", path.display()))
}

#[derive(Parser)]
#[command(
    name = "koopman",
    version,
    about = "Deep Koopman autoencoders for dynamical systems"
)]
struct Cli {
    /// Only log errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    /// Log per-epoch progress.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the model described by a config file.
    Fit {
        config: PathBuf,
        /// Run directory; overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the model seed.
        #[arg(long, env = "KOOPMAN_SEED")]
        seed: Option<u64>,
    },
    /// Predict with a saved checkpoint.
    Predict {
        checkpoint: PathBuf,
        /// State models: indexes to predict at, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        at: Option<Vec<f64>>,
        /// Trajectory models: CSV of initial states, one per row.
        #[arg(long)]
        initial: Option<PathBuf>,
        /// Trajectory models: steps to roll out (default: training length).
        #[arg(long)]
        steps: Option<usize>,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the `[hypsearch]` options of a config file.
    Hypsearch {
        config: PathBuf,
        /// Directory for results.csv and summary.json; overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Configurations to sample; overrides `numruns` (default: all).
        #[arg(long)]
        numruns: Option<usize>,
        /// Concurrent training runs; overrides `workers`.
        #[arg(long)]
        workers: Option<usize>,
        /// Search seed; each run derives its own from it.
        #[arg(long, env = "KOOPMAN_SEED")]
        seed: Option<u64>,
    },
    /// Generate a synthetic dataset.
    GenData {
        #[command(subcommand)]
        kind: gen::GenKind,
    },
    /// Reshape a stats CSV into long format (epoch, split, metric, value).
    PlotData {
        stats: PathBuf,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        LevelFilter::Error
    } else if cli.verbose {
        LevelFilter::Debug
    } else {
        LevelFilter::Info
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();
    let result = match cli.command {
        Command::Fit { config, out, seed } => fit(&config, out, seed),
        Command::Predict {
            checkpoint,
            at,
            initial,
            steps,
            out,
        } => predict(&checkpoint, at, initial.as_deref(), steps, out.as_deref()),
        Command::Hypsearch {
            config,
            out,
            numruns,
            workers,
            seed,
        } => hypsearch(&config, out, numruns, workers, seed),
        Command::GenData { kind } => gen::run(kind),
        Command::PlotData { stats, out } => plot::run(&stats, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

pub(crate) fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(v).expect("JSON values serialize");
    text.push('\n');
    fs::write(path, text).map_err(io_out(path))
}

fn fit(config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(config)?;
    cfg.set_seed(seed);
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    let (model, stats, resolved) = match cfg.kind {
        ModelKind::StatePred => {
            let ds = cfg.snapshots()?;
            let mc: StatePredConfig = cfg.typed()?;
            let mut m = StatePred::new(&ds, mc.clone())?;
            m.train_net(&ds)?;
            let mut stats = m.stats.clone();
            if ds.test.is_some() {
                stats.test = Some(m.test_net(&ds)?);
            }
            (Model::from(m), stats, serde_json::to_value(mc))
        }
        ModelKind::TrajPred => {
            let ds = cfg.trajectories()?;
            let mc: TrajPredConfig = cfg.typed()?;
            let mut m = TrajPred::new(&ds, mc.clone())?;
            m.train_net(&ds)?;
            let mut stats = m.stats.clone();
            if ds.test.is_some() {
                stats.test = Some(m.test_net(&ds)?);
            }
            (Model::from(m), stats, serde_json::to_value(mc))
        }
    };
    fs::create_dir_all(&dir).map_err(io_out(&dir))?;
    let ckpt = dir.join("checkpoint.json");
    checkpoint::save(&model, &ckpt).map_err(out_err(&ckpt))?;
    let stats_path = dir.join("stats.csv");
    let file = File::create(&stats_path).map_err(io_out(&stats_path))?;
    stats
        .write_stats_csv(BufWriter::new(file))
        .map_err(out_err(&stats_path))?;
    let summaries: serde_json::Map<String, Value> = RunStats::sort_keys()
        .into_iter()
        .map(|k| {
            let v = stats.summary(&k).expect("sort keys are valid");
            (k, json!(v))
        })
        .collect();
    let last = stats.epochs.last();
    let summary = json!({
        "kind": model.kind(),
        "config": resolved.expect("configs serialize"),
        "epochs": stats.epochs.len(),
        "final": {
            "train": last.map(|e| e.train),
            "val": last.and_then(|e| e.val),
        },
        "summary": summaries,
        "test": stats.test,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    if let Some(t) = stats.test {
        info!("test prediction ANAE {:.3}%", t.pred_anae);
    }
    info!("wrote {}", dir.display());
    Ok(())
}

pub(crate) fn output(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_out(p))?)),
        None => Box::new(Stdout(io::stdout().lock())),
    })
}

/// Stdout that ends the process quietly once the reader has gone away, as
/// when piped into `head`.
struct Stdout(io::StdoutLock<'static>);

impl Stdout {
    fn check<T>(r: io::Result<T>) -> io::Result<T> {
        if matches!(&r, Err(e) if e.kind() == io::ErrorKind::BrokenPipe) {
            std::process::exit(0);
        }
        r
    }
}

impl Write for Stdout {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        Self::check(self.0.write(buf))
    }

    fn flush(&mut self) -> io::Result<()> {
        Self::check(self.0.flush())
    }
}

fn predict(
    ckpt: &Path,
    at: Option<Vec<f64>>,
    initial: Option<&Path>,
    steps: Option<usize>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let model = checkpoint::load(ckpt)?;
    let dest = out.unwrap_or(Path::new("stdout"));
    match model {
        Model::StatePred(m) => {
            if initial.is_some() || steps.is_some() {
                return Err(Failure::user(
                    "checkpoint holds a state model; request indexes with --at",
                ));
            }
            let t = at.ok_or_else(|| Failure::user("--at is required for a state model"))?;
            let x = m.predict_new(&t)?;
            let s = Snapshots::new(x, t)?;
            write_snapshots_csv(&s, output(out)?).map_err(out_err(dest))
        }
        Model::TrajPred(m) => {
            if at.is_some() {
                return Err(Failure::user(
                    "checkpoint holds a trajectory model; give --initial states instead of --at",
                ));
            }
            let path = initial
                .ok_or_else(|| Failure::user("--initial is required for a trajectory model"))?;
            let x0 = load_states(path)?;
            let steps = steps.unwrap_or(m.num_steps);
            if steps == 0 {
                return Err(Failure::user("--steps must be at least 1"));
            }
            let mut w = output(out)?;
            if x0.cols() != m.scaler.dim() {
                return Err(Failure::user(format!(
                    "initial states have {} features, the model expects {}",
                    x0.cols(),
                    m.scaler.dim()
                )));
            }
            for tr in m.predict_new(&x0, steps)? {
                write_trajectory_line(&tr, &mut w).map_err(out_err(dest))?;
            }
            w.flush().map_err(io_out(dest))
        }
    }
}

fn hypsearch(
    config: &Path,
    out: Option<PathBuf>,
    numruns: Option<usize>,
    workers: Option<usize>,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(config)?;
    cfg.set_seed(seed);
    let section = cfg
        .hypsearch
        .take()
        .ok_or_else(|| Failure::user(format!("{} has no [hypsearch] section", config.display())))?;
    let data = cfg.search_data()?;
    let master = cfg.seed();
    let mut base = cfg.model.clone();
    base.remove("seed");
    let spec = SearchSpec {
        base,
        options: section.options,
        numruns: numruns.or(section.numruns).unwrap_or(usize::MAX),
        sort_key: section.sort_key,
        workers: workers.unwrap_or(section.workers),
        seed: master,
    };
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&dir).map_err(io_out(&dir))?;
    let files = SearchFiles {
        results_csv: dir.join("results.csv"),
        summary_json: dir.join("summary.json"),
    };
    let outcome = run_hyp_search(&data, &spec, Some(&files))?;
    println!("rank\tconfig_id\t{}\thyperparameters", spec.sort_key);
    for (i, row) in outcome.ranked.iter().take(5).enumerate() {
        println!(
            "{}\t{}\t{}\t{}",
            i + 1,
            row.config_id,
            row.value(&spec.sort_key),
            serde_json::to_string(&row.assignment).expect("JSON values serialize")
        );
    }
    if !outcome.failed.is_empty() {
        info!(
            "{} configuration(s) failed; see {}",
            outcome.failed.len(),
            files.results_csv.display()
        );
    }
    Ok(())
}
