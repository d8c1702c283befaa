//! `gen-data`: synthetic datasets in the model input formats, plus a
//! `params.json` recording how they were made.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use koopman_core::data::{save_snapshots, save_trajectories, Snapshots, Trajectories};
use koopman_core::datagen::{
    gen_linear_snapshots, gen_linear_system, gen_poly_manifold, PolyManifoldParams,
};
use koopman_core::RMatrix;
use serde_json::{json, Value};

use crate::{input, io_out, out_err, write_json, Failure};

#[derive(Subcommand)]
pub enum GenKind {
    /// Linear dynamics `x_{i+1} = A x_i`.
    Linear(LinearArgs),
    /// The planar system with a polynomial slow manifold.
    PolyManifold(PolyArgs),
}

#[derive(Args)]
pub struct SplitArgs {
    /// Split sizes in order train[,val[,test]]; must sum to the total.
    #[arg(long, value_delimiter = ',')]
    split: Option<Vec<usize>>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct LinearArgs {
    /// Rows separated by `;`, entries by `,`, e.g. "0.9,0;0,0.8".
    #[arg(long, allow_hyphen_values = true)]
    matrix: String,
    /// Initial states in the same syntax, one per row.
    #[arg(long, allow_hyphen_values = true)]
    x0: String,
    /// Steps per trajectory; each has `steps + 1` states.
    #[arg(long)]
    steps: usize,
    /// Write one snapshot CSV (single initial state) instead of trajectories.
    #[arg(long)]
    snapshots: bool,
    /// Index of the first snapshot.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    t0: f64,
    /// Index spacing of snapshots.
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Args)]
pub struct PolyArgs {
    /// Slow rate; needs lambda < mu < 0 [default: -0.05].
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    /// Fast rate [default: -1].
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// Time step [default: 0.02].
    #[arg(long)]
    dt: Option<f64>,
    /// Steps per trajectory [default: 50].
    #[arg(long)]
    steps: Option<usize>,
    /// Number of trajectories [default: 100].
    #[arg(long)]
    count: Option<usize>,
    /// Seed for the initial states [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Initial-state box for x1 as `lo,hi`.
    #[arg(long, allow_hyphen_values = true)]
    x1_range: Option<String>,
    /// Initial-state box for x2 as `lo,hi`.
    #[arg(long, allow_hyphen_values = true)]
    x2_range: Option<String>,
    #[command(flatten)]
    split: SplitArgs,
}

fn parse_matrix(text: &str) -> Result<RMatrix, Failure> {
    let rows = text
        .split(';')
        .map(|r| {
            r.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Failure::user(format!("bad number `{}`: {e}", v.trim())))
                })
                .collect::<Result<Vec<f64>, Failure>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    RMatrix::from_rows(&rows).map_err(input)
}

fn parse_range(text: &str) -> Result<(f64, f64), Failure> {
    let m = parse_matrix(text)?;
    match m.as_slice() {
        &[lo, hi] if m.rows() == 1 => Ok((lo, hi)),
        _ => Err(Failure::user(format!("range `{text}` must be `lo,hi`"))),
    }
}

const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

fn check_split(sizes: &[usize], total: usize) -> Result<(), Failure> {
    if sizes.is_empty() || sizes.len() > 3 {
        return Err(Failure::user("--split takes one to three sizes"));
    }
    let sum: usize = sizes.iter().sum();
    if sum != total {
        return Err(Failure::user(format!(
            "split sizes sum to {sum}, expected {total}"
        )));
    }
    Ok(())
}

fn write_trajectories(t: &Trajectories, split: &SplitArgs) -> Result<Vec<String>, Failure> {
    let Some(sizes) = &split.split else {
        let path = split.out.join("data.ndjson");
        save_trajectories(t, &path).map_err(out_err(&path))?;
        return Ok(vec!["data.ndjson".into()]);
    };
    check_split(sizes, t.len())?;
    let mut files = Vec::new();
    for (part, name) in t.split(sizes)?.iter().zip(SPLIT_NAMES) {
        let file = format!("{name}.ndjson");
        let path = split.out.join(&file);
        save_trajectories(part, &path).map_err(out_err(&path))?;
        files.push(file);
    }
    Ok(files)
}

/// Contiguous blocks of snapshots in time order.
fn write_snapshots(s: &Snapshots, split: &SplitArgs) -> Result<Vec<String>, Failure> {
    let sizes = split.split.clone().unwrap_or_else(|| vec![s.len()]);
    check_split(&sizes, s.len())?;
    let single = split.split.is_none();
    let mut files = Vec::new();
    let mut start = 0;
    for (n, name) in sizes.iter().zip(SPLIT_NAMES) {
        let rows: Vec<usize> = (start..start + n).collect();
        start += n;
        let x = RMatrix::from_fn(rows.len(), s.dim(), |r, c| s.x[(rows[r], c)]);
        let part = Snapshots::new(x, rows.iter().map(|&r| s.t[r]).collect())?;
        let file = if single {
            "snapshots.csv".to_string()
        } else {
            format!("{name}.csv")
        };
        let path = split.out.join(&file);
        save_snapshots(&part, &path).map_err(out_err(&path))?;
        files.push(file);
    }
    Ok(files)
}

fn prepare(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(io_out(out))
}

pub fn run(kind: GenKind) -> Result<(), Failure> {
    let (params, split, files): (Value, &SplitArgs, Vec<String>);
    match &kind {
        GenKind::Linear(a) => {
            let m = parse_matrix(&a.matrix)?;
            let x0 = parse_matrix(&a.x0)?;
            prepare(&a.split.out)?;
            files = if a.snapshots {
                if x0.rows() != 1 {
                    return Err(Failure::user("--snapshots takes exactly one initial state"));
                }
                if !(a.dt > 0.0 && a.dt.is_finite() && a.t0.is_finite()) {
                    return Err(Failure::user("--dt must be positive and --t0 finite"));
                }
                let s =
                    gen_linear_snapshots(&m, x0.as_slice(), a.steps, a.t0, a.dt).map_err(input)?;
                write_snapshots(&s, &a.split)?
            } else {
                write_trajectories(
                    &gen_linear_system(&m, &x0, a.steps).map_err(input)?,
                    &a.split,
                )?
            };
            let rows = |m: &RMatrix| (0..m.rows()).map(|r| m.row(r).to_vec()).collect::<Vec<_>>();
            params = json!({
                "generator": "linear",
                "matrix": rows(&m),
                "x0": rows(&x0),
                "steps": a.steps,
                "snapshots": a.snapshots,
                "t0": a.t0,
                "dt": a.dt,
            });
            split = &a.split;
        }
        GenKind::PolyManifold(a) => {
            let d = PolyManifoldParams::default();
            let p = PolyManifoldParams {
                mu: a.mu.unwrap_or(d.mu),
                lambda: a.lambda.unwrap_or(d.lambda),
                dt: a.dt.unwrap_or(d.dt),
                steps: a.steps.unwrap_or(d.steps),
                x1_range: a
                    .x1_range
                    .as_deref()
                    .map(parse_range)
                    .transpose()?
                    .unwrap_or(d.x1_range),
                x2_range: a
                    .x2_range
                    .as_deref()
                    .map(parse_range)
                    .transpose()?
                    .unwrap_or(d.x2_range),
                count: a.count.unwrap_or(d.count),
                seed: a.seed.unwrap_or(d.seed),
            };
            let t = gen_poly_manifold(&p)?;
            prepare(&a.split.out)?;
            files = write_trajectories(&t, &a.split)?;
            params = json!({ "generator": "poly-manifold", "params": p });
            split = &a.split;
        }
    }
    let mut doc = params;
    doc["split"] = json!(split.split);
    doc["files"] = json!(files);
    write_json(&split.out.join("params.json"), &doc)
}
