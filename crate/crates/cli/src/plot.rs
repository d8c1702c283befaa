//! `plot-data`: stats CSV to tidy long format, one row per
//! (epoch, split, metric). Absent validation metrics stay as empty values.

use std::fs::File;
use std::path::Path;

use koopman_core::metrics::{METRIC_NAMES, SPLIT_SUFFIXES};
use koopman_core::RunStats;

use crate::{output, Failure};

pub fn run(stats: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let parse = |e: csv::Error| Failure::user(format!("{}: {e}", stats.display()));
    let file = File::open(stats)
        .map_err(|e| Failure::user(format!("cannot read {}: {e}", stats.display())))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(parse)?
        .iter()
        .map(String::from)
        .collect();
    if header != RunStats::stats_header() {
        return Err(Failure::user(format!(
            "{}: not a stats file (unexpected columns)",
            stats.display()
        )));
    }
    let dest = out.unwrap_or(Path::new("stdout"));
    let write = |e: csv::Error| Failure::runtime(format!("cannot write {}: {e}", dest.display()));
    let mut w = csv::Writer::from_writer(output(out)?);
    w.write_record(["epoch", "split", "metric", "value"])
        .map_err(write)?;
    for rec in rdr.records() {
        let rec = rec.map_err(parse)?;
        let epoch = &rec[0];
        if epoch.parse::<usize>().is_err() {
            return Err(Failure::user(format!(
                "{}: bad epoch `{epoch}`",
                stats.display()
            )));
        }
        let mut col = 1;
        for split in SPLIT_SUFFIXES {
            for metric in METRIC_NAMES {
                w.write_record([epoch, split, metric, &rec[col]])
                    .map_err(write)?;
                col += 1;
            }
        }
    }
    w.flush()
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", dest.display())))
}
