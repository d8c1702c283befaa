mod common;

use std::fs;
use std::process::Command;

use common::*;

use koopman_core::metrics::{anae, METRIC_NAMES, SPLIT_SUFFIXES};
use koopman_core::RunStats;

#[test]
fn gen_data_linear_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lin");
    ok(&[
        "gen-data",
        "linear",
        "--matrix",
        "0.9,0;0,0.8",
        "--x0",
        "1,1",
        "--steps",
        "3",
        "--out",
        s(&out),
    ]);
    let line = fs::read_to_string(out.join("data.ndjson")).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    let traj = v["traj"].as_array().unwrap();
    assert_eq!(traj.len(), 4);
    let want = [[1.0, 1.0], [0.9, 0.8], [0.81, 0.64], [0.729, 0.512]];
    for (state, w) in traj.iter().zip(want) {
        for c in 0..2 {
            assert!((state[c].as_f64().unwrap() - w[c]).abs() < 1e-15);
        }
    }
    let params: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("params.json")).unwrap()).unwrap();
    assert_eq!(params["generator"], "linear");
    assert_eq!(params["files"][0], "data.ndjson");
}

#[test]
fn gen_data_rejects_bad_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    assert_eq!(
        code(&koopman(&[
            "gen-data",
            "poly-manifold",
            "--mu",
            "0.5",
            "--out",
            out
        ])),
        2
    );
    assert_eq!(
        code(&koopman(&[
            "gen-data",
            "poly-manifold",
            "--count",
            "10",
            "--split",
            "5,4",
            "--out",
            out
        ])),
        2
    );
    assert_eq!(
        code(&koopman(&[
            "gen-data", "linear", "--matrix", "1,0", "--x0", "1", "--steps", "2", "--out", out
        ])),
        2
    );
}

#[test]
fn poly_manifold_round_trip_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "gen-data",
        "poly-manifold",
        "--count",
        "4",
        "--seed",
        "9",
        "--x1-range",
        "-0.5,0.5",
        "--out",
        s(dir.path()),
    ]);
    let got = koopman_core::data::load_trajectories(&dir.path().join("data.ndjson")).unwrap();
    let p = koopman_core::datagen::PolyManifoldParams {
        count: 4,
        seed: 9,
        ..Default::default()
    };
    assert_eq!(got, koopman_core::datagen::gen_poly_manifold(&p).unwrap());
}

#[test]
fn fit_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = statepred_setup(dir.path(), "");
    ok(&["--quiet", "fit", s(&cfg)]);
    let run = dir.path().join("run");
    let stats = rows(&run.join("stats.csv"));
    assert_eq!(stats.len(), 20);
    assert!(stats.iter().all(|r| r.iter().all(|c| !c.is_empty())));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["epochs"], 20);
    assert_eq!(summary["config"]["rank"], 2);
    assert!(summary["test"]["pred_anae"].as_f64().unwrap() >= 0.0);
    assert!(summary["summary"]["avg_pred_anae_va"].as_f64().is_some());
    assert!(run.join("checkpoint.json").exists());
}

#[test]
fn fit_is_deterministic_and_seed_overridable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = statepred_setup(dir.path(), "seed = 5\n");
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    ok(&["-q", "fit", s(&cfg), "--out", s(&a)]);
    ok(&["-q", "fit", s(&cfg), "--out", s(&b)]);
    for f in ["checkpoint.json", "stats.csv", "summary.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let out = Command::new(env!("CARGO_BIN_EXE_koopman"))
        .args(["-q", "fit", s(&cfg), "--out", s(&c)])
        .env("KOOPMAN_SEED", "6")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_ne!(
        fs::read(a.join("checkpoint.json")).unwrap(),
        fs::read(c.join("checkpoint.json")).unwrap()
    );
}

#[test]
fn statepred_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = statepred_setup(dir.path(), "");
    ok(&["-q", "fit", s(&cfg)]);
    let ckpt = dir.path().join("run/checkpoint.json");
    let pred = dir.path().join("pred.csv");
    ok(&["predict", s(&ckpt), "--at", "3.75,21", "--out", s(&pred)]);
    let r = rows(&pred);
    assert_eq!(r.len(), 2);
    assert_eq!(&r[0][0], "3.75");
    assert_eq!(&r[1][0], "21.0");

    // Predictions at the training indexes carry the recorded training
    // prediction ANAE (the first index is the fit's base state, not a prediction).
    let train = koopman_core::data::load_snapshots(&dir.path().join("data/train.csv")).unwrap();
    let at: Vec<String> = train.t[1..].iter().map(|t| format!("{t:?}")).collect();
    ok(&[
        "predict",
        s(&ckpt),
        "--at",
        &at.join(","),
        "--out",
        s(&pred),
    ]);
    let p = koopman_core::data::load_snapshots(&pred).unwrap();
    let reference: Vec<f64> = (1..train.len())
        .flat_map(|r| train.x.row(r).to_vec())
        .collect();
    let got = anae(&reference, p.x.as_slice()).unwrap();
    let stats = rows(&dir.path().join("run/stats.csv"));
    let col = RunStats::stats_header()
        .iter()
        .position(|h| h == "pred_anae_tr")
        .unwrap();
    let recorded: f64 = stats.last().unwrap()[col].parse().unwrap();
    assert!(
        (got - recorded).abs() <= 1e-9 * recorded.max(1.0),
        "{got} vs {recorded}"
    );
}

#[test]
fn kind_mismatch_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = statepred_setup(dir.path(), "");
    ok(&["-q", "fit", s(&cfg)]);
    let ckpt = dir.path().join("run/checkpoint.json");
    let states = dir.path().join("x0.csv");
    fs::write(&states, "f0,f1\n1,0\n").unwrap();
    let out = koopman(&["predict", s(&ckpt), "--initial", s(&states)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("state model"));
    assert_eq!(code(&koopman(&["predict", s(&ckpt)])), 2);
    let junk = dir.path().join("junk.json");
    fs::write(&junk, "{\"schema_version\": 7}").unwrap();
    assert_eq!(code(&koopman(&["predict", s(&junk), "--at", "1"])), 2);
}

#[test]
fn trajpred_fit_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trajpred_setup(dir.path());
    ok(&["-q", "fit", s(&cfg)]);
    let run = dir.path().join("run");
    assert_eq!(rows(&run.join("stats.csv")).len(), 15);
    let states = dir.path().join("x0.csv");
    fs::write(&states, "f0,f1\n0.1,0.2\n-0.3,0.4\n0.25,-0.25\n").unwrap();
    let out = ok(&[
        "predict",
        s(&run.join("checkpoint.json")),
        "--initial",
        s(&states),
        "--steps",
        "5",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    for l in lines {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        let traj = v["traj"].as_array().unwrap();
        assert_eq!(traj.len(), 5);
        assert!(traj.iter().all(|s| s.as_array().unwrap().len() == 2));
    }
    assert_eq!(
        code(&koopman(&[
            "predict",
            s(&run.join("checkpoint.json")),
            "--at",
            "1"
        ])),
        2
    );
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = statepred_setup(dir.path(), "depth = 3\n");
    assert_eq!(code(&koopman(&["-q", "fit", s(&cfg)])), 2);
    let cfg = statepred_setup(dir.path(), "");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("data/train.csv", "data/missing.csv");
    fs::write(&cfg, text).unwrap();
    assert_eq!(code(&koopman(&["-q", "fit", s(&cfg)])), 2);
    assert_eq!(
        code(&koopman(&["-q", "fit", s(&dir.path().join("nope.toml"))])),
        2
    );
    let cfg = statepred_setup(dir.path(), "");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("rank = 2", "rank = 40");
    fs::write(&cfg, text).unwrap();
    assert_eq!(code(&koopman(&["-q", "fit", s(&cfg)])), 2);
}

#[test]
fn training_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("huge.csv"),
        "t,f0\n0,1e200\n1,-1e200\n2,3e200\n3,1e200\n",
    )
    .unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "kind = \"statepred\"\n[data]\ntrain = \"huge.csv\"\n[model]\nrank = 1\nencoded_size = 1\n\
         numepochs = 3\nscale_features = false\n",
    )
    .unwrap();
    let out = koopman(&["-q", "fit", s(&cfg)]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch 1"));
}

#[test]
fn plot_data_reshapes_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = statepred_setup(dir.path(), "");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("numepochs = 20", "numepochs = 10");
    fs::write(&cfg, text).unwrap();
    ok(&["-q", "fit", s(&cfg)]);
    let stats = dir.path().join("run/stats.csv");
    let long = dir.path().join("long.csv");
    ok(&["plot-data", s(&stats), "--out", s(&long)]);
    let r = rows(&long);
    assert_eq!(r.len(), 120);

    // Pivot back to the wide table.
    let header = RunStats::stats_header();
    let original = rows(&stats);
    let mut rebuilt = vec![vec![String::new(); header.len()]; original.len()];
    let keys = RunStats::sort_keys();
    for rec in &r {
        let epoch: usize = rec[0].parse().unwrap();
        assert!(SPLIT_SUFFIXES.contains(&&rec[1]));
        assert!(METRIC_NAMES.contains(&&rec[2]));
        assert!(keys.contains(&format!("final_{}_{}", &rec[2], &rec[1])));
        let col = header
            .iter()
            .position(|h| *h == format!("{}_{}", &rec[2], &rec[1]))
            .unwrap();
        rebuilt[epoch - 1][0] = rec[0].to_string();
        rebuilt[epoch - 1][col] = rec[3].to_string();
    }
    for (a, b) in original.iter().zip(&rebuilt) {
        assert_eq!(
            a.iter().collect::<Vec<_>>(),
            b.iter().map(String::as_str).collect::<Vec<_>>()
        );
    }
    fs::write(dir.path().join("bad.csv"), "a,b\n1,2\n").unwrap();
    assert_eq!(
        code(&koopman(&["plot-data", s(&dir.path().join("bad.csv"))])),
        2
    );
}

#[test]
fn hypsearch_ranks_and_persists() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = search_config(dir.path(), "rank = [1, 2]\n");
    let out = ok(&["-q", "hypsearch", s(&cfg), "--workers", "2"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains("\"rank\":2"), "{text}");
    let results = rows(&dir.path().join("run/results.csv"));
    assert_eq!(results.len(), 2);
    assert!(results.iter().all(|r| &r[1] == "completed"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["completed"], 2);

    let bad = search_config(dir.path(), "depth = [1, 2]\n");
    assert_eq!(code(&koopman(&["-q", "hypsearch", s(&bad)])), 2);
    let cfg = search_config(dir.path(), "rank = [1, 2]\n");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("avg_pred_anae_va", "best");
    fs::write(&cfg, text).unwrap();
    assert_eq!(code(&koopman(&["-q", "hypsearch", s(&cfg)])), 2);
}

/// Kills a search after its first run finishes; the results file must hold
/// exactly that row.
#[test]
fn interrupted_search_keeps_completed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (n, r) = interrupted_search(dir.path());
    assert_eq!(n, 1);
    assert_eq!(&r[0][0], "0");
    assert_eq!(&r[0][1], "completed");
}
