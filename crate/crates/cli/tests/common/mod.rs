//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::thread::sleep;
use std::time::{Duration, Instant};

pub fn koopman(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_koopman"))
        .args(args)
        .env_remove("KOOPMAN_SEED")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = koopman(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

/// Snapshot data of a damped rotation split 14/3/3 plus a config using it.
pub fn statepred_setup(dir: &Path, extra: &str) -> PathBuf {
    ok(&[
        "gen-data",
        "linear",
        "--matrix",
        "0.9,-0.3;0.3,0.9",
        "--x0",
        "1,0.5",
        "--steps",
        "19",
        "--snapshots",
        "--dt",
        "0.5",
        "--split",
        "14,3,3",
        "--out",
        s(&dir.join("data")),
    ]);
    let cfg = dir.join("run.toml");
    fs::write(
        &cfg,
        format!(
            "kind = \"statepred\"\n\n[data]\ntrain = \"data/train.csv\"\nval = \"data/val.csv\"\n\
             test = \"data/test.csv\"\n\n[model]\nrank = 2\nencoded_size = 3\n\
             encoder_hidden_layers = [8]\nnumepochs = 20\nlearning_rate = 0.01\n{extra}"
        ),
    )
    .unwrap();
    cfg
}

pub fn trajpred_setup(dir: &Path) -> PathBuf {
    ok(&[
        "gen-data",
        "poly-manifold",
        "--count",
        "30",
        "--steps",
        "10",
        "--seed",
        "3",
        "--split",
        "20,5,5",
        "--out",
        s(&dir.join("data")),
    ]);
    let cfg = dir.join("run.toml");
    fs::write(
        &cfg,
        "kind = \"trajpred\"\n\n[data]\ntrain = \"data/train.ndjson\"\nval = \"data/val.ndjson\"\n\
         test = \"data/test.ndjson\"\n\n[model]\nencoded_size = 3\nencoder_hidden_layers = [6]\n\
         numepochs = 15\nbatch_size = 8\n",
    )
    .unwrap();
    cfg
}

pub fn search_config(dir: &Path, options: &str) -> PathBuf {
    let cfg = statepred_setup(dir, "");
    let mut text = fs::read_to_string(&cfg).unwrap().replace("rank = 2\n", "");
    text.push_str(&format!(
        "\n[hypsearch]\nsort_key = \"avg_pred_anae_va\"\n\n[hypsearch.options]\n{options}"
    ));
    fs::write(&cfg, text).unwrap();
    cfg
}

pub fn interrupted_search(dir: &Path) -> (usize, Vec<csv::StringRecord>) {
    let cfg = search_config(dir, "rank = 2\nnumepochs = [1, 1000000, 1000000]\n");
    let results = dir.join("run/results.csv");
    let mut child = Command::new(env!("CARGO_BIN_EXE_koopman"))
        .args(["-q", "hypsearch", s(&cfg), "--workers", "1"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    loop {
        let n = fs::read_to_string(&results)
            .map(|t| t.lines().count())
            .unwrap_or(0);
        if n >= 2 {
            break;
        }
        assert!(
            start.elapsed() < Duration::from_secs(60),
            "first run never finished"
        );
        sleep(Duration::from_millis(20));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let r = rows(&results);
    (r.len(), r)
}
