//! End-to-end runs of the `covreg` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use covreg_cli::io::{load_archive, load_dataset, read_table, save_dataset};
use serde_json::Value;
use tempfile::TempDir;

fn covreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covreg")).args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), stderr(out));
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &TempDir, seed: u64, extra: &[&str]) -> (PathBuf, PathBuf) {
    let (data, truth) = (path(dir, "data.csv"), path(dir, "truth.json"));
    let seed = seed.to_string();
    let mut args = vec!["simulate", "--preset", "prior-draw", "--seed", &seed, "--out", s(&data), "--truth", s(&truth)];
    args.extend_from_slice(extra);
    assert_ok(&covreg(&args));
    (data, truth)
}

const SHORT_RUN: &[&str] = &["--iterations", "100", "--burn-in", "20", "--thin", "4", "--l-star", "4", "--k-star", "3"];

fn fit(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["fit", "--data", s(data), "--out", s(out)];
    args.extend_from_slice(SHORT_RUN);
    args.extend_from_slice(extra);
    covreg(&args)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_fit_diagnose_pipeline() {
    let dir = TempDir::new().unwrap();
    let (data, truth) = simulate(&dir, 7, &[]);
    assert!(data.with_file_name("data.csv.manifest.json").exists());
    let archive = path(&dir, "fit.json");
    assert_ok(&fit(&data, &archive, &["--seed", "3"]));
    let (loaded, manifest) = load_archive(&archive).unwrap();
    assert_eq!(loaded.len(), 20);
    assert_eq!(loaded.p(), 10);
    assert_eq!(manifest.command, "fit");
    assert_eq!(manifest.inputs.len(), 1);

    let report = path(&dir, "report.json");
    let curves = path(&dir, "frobenius.csv");
    assert_ok(&covreg(&[
        "diagnose",
        "--archive",
        s(&archive),
        "--truth",
        s(&truth),
        "--out",
        s(&report),
        "--frobenius-out",
        s(&curves),
    ]));
    let doc = read_json(&report);
    assert_eq!(doc["kind"], "report");
    let summary = &doc["payload"]["archives"][0];
    let coverage = summary["hpd_coverage"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&coverage));
    assert!(summary["mean_frobenius_error"].as_f64().unwrap() > 0.0);
    let lines = std::fs::read_to_string(&curves).unwrap().lines().count();
    assert_eq!(lines, 101);
}

#[test]
fn heuristic_length_scale_on_preset_logs_ten() {
    let dir = TempDir::new().unwrap();
    let (data, _) = simulate(&dir, 0, &[]);
    let out = fit(&data, &path(&dir, "fit.json"), &["--kappa", "heuristic", "--iterations", "4", "--burn-in", "2", "--thin", "1"]);
    assert_ok(&out);
    let log = stderr(&out);
    assert!(log.contains("kappa = 10"), "{log}");
    let (archive, _) = load_archive(&path(&dir, "fit.json")).unwrap();
    assert_eq!(archive.kappa, Some(10.0));
}

#[test]
fn discounting_baseline_logs_default_discount() {
    let dir = TempDir::new().unwrap();
    let (data, _) = simulate(&dir, 1, &[]);
    let out_path = path(&dir, "mdw.json");
    let out = covreg(&["baseline", "mdw", "--data", s(&data), "--out", s(&out_path), "--h0", "40", "--draws", "5"]);
    assert_ok(&out);
    assert!(stderr(&out).contains("beta = 0.975"), "{}", stderr(&out));
    let (archive, _) = load_archive(&out_path).unwrap();
    assert_eq!(archive.model, "matrix-discounting");
    assert_eq!(archive.len(), 5);
}

#[test]
fn discounting_needs_complete_data_unless_filled() {
    let dir = TempDir::new().unwrap();
    let (data, _) = simulate(&dir, 2, &["--holdout", "biased"]);
    let out_path = path(&dir, "mdw.json");
    let refused = covreg(&["baseline", "mdw", "--data", s(&data), "--out", s(&out_path), "--draws", "2"]);
    assert_eq!(refused.status.code(), Some(3), "{}", stderr(&refused));
    let filled = covreg(&["baseline", "mdw", "--data", s(&data), "--out", s(&out_path), "--draws", "2", "--locf"]);
    assert_ok(&filled);
}

#[test]
fn homoscedastic_baselines_run() {
    let dir = TempDir::new().unwrap();
    let (data, _) = simulate(&dir, 4, &[]);
    for (sub, model) in [("homo-gp", "homoscedastic-gp-mean"), ("homo-lf", "homoscedastic-latent-factor")] {
        let out_path = path(&dir, &format!("{sub}.json"));
        let mut args = vec!["baseline", sub, "--data", s(&data), "--out", s(&out_path)];
        args.extend_from_slice(SHORT_RUN);
        assert_ok(&covreg(&args));
        assert_eq!(load_archive(&out_path).unwrap().0.model, model);
    }
}

#[test]
fn exit_codes_by_error_class() {
    let dir = TempDir::new().unwrap();
    assert_eq!(covreg(&[]).status.code(), Some(2));
    assert_eq!(covreg(&["fit", "--data"]).status.code(), Some(2));
    let missing = path(&dir, "missing.csv");
    assert_eq!(fit(&missing, &path(&dir, "a.json"), &[]).status.code(), Some(2));

    let bad = path(&dir, "bad.csv");
    std::fs::write(&bad, "x1,y1\n1,0.5\n2,abc\n").unwrap();
    let out = fit(&bad, &path(&dir, "a.json"), &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains(":3:"), "{}", stderr(&out));

    let (data, _) = simulate(&dir, 5, &[]);
    let out = covreg(&["baseline", "mdw", "--data", s(&data), "--out", s(&path(&dir, "m.json")), "--h0", "5"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert_eq!(fit(&data, &path(&dir, "a.json"), &["--burn-in", "100"]).status.code(), Some(2));

    assert!(covreg(&["--help"]).status.success());

    let numerical = covreg_cli::CliError::from(covreg::CovRegError::Numerical("factorization failed".into()));
    assert_eq!(numerical.exit_code(), 4);
}

#[test]
fn csv_round_trip_keeps_missing_cells() {
    let dir = TempDir::new().unwrap();
    let (data, _) = simulate(&dir, 6, &["--holdout", "biased"]);
    let first = load_dataset(&data).unwrap();
    assert!(first.missing_count() > 0);
    let copy = path(&dir, "copy.csv");
    save_dataset(&copy, &first).unwrap();
    let second = load_dataset(&copy).unwrap();
    assert_eq!(first.observed, second.observed);
    assert_eq!(first.xs, second.xs);
    for i in 0..first.n() {
        for j in 0..first.p() {
            if first.observed[(i, j)] {
                assert_eq!(first.y[(i, j)].to_bits(), second.y[(i, j)].to_bits());
            }
        }
    }
    let table = read_table("x1,a,b\n0.5,1.0,\n1.0,NaN,2.0\n".as_bytes(), "inline").unwrap();
    assert_eq!(table.response_names, vec!["a", "b"]);
    assert_eq!(table.dataset.missing_count(), 2);
}

#[test]
fn archive_version_mismatch_is_rejected() {
    let dir = TempDir::new().unwrap();
    let (data, _) = simulate(&dir, 8, &[]);
    let archive = path(&dir, "fit.json");
    assert_ok(&fit(&data, &archive, &[]));
    let mut doc = read_json(&archive);
    doc["payload"]["format_version"] = Value::from(99);
    std::fs::write(&archive, doc.to_string()).unwrap();
    let out = covreg(&["diagnose", "--archive", s(&archive), "--out", s(&path(&dir, "r.json"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("format version"), "{}", stderr(&out));
}

#[test]
fn emit_series_is_sorted_and_stable() {
    let dir = TempDir::new().unwrap();
    let (data, truth) = simulate(&dir, 9, &[]);
    let archive = path(&dir, "fit.json");
    assert_ok(&fit(&data, &archive, &[]));
    let (a, b) = (path(&dir, "a.csv"), path(&dir, "b.csv"));
    for out in [&a, &b] {
        assert_ok(&covreg(&["emit-series", "--archive", s(&archive), "--out", s(out), "--truth", s(&truth)]));
    }
    let text = std::fs::read(&a).unwrap();
    assert_eq!(text, std::fs::read(&b).unwrap());

    let text = String::from_utf8(text).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(header.contains(&"truth"));
    assert_eq!(&header[..3], &["x", "element_i", "element_j"]);
    let keys: Vec<(usize, usize, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[2].parse().unwrap(), f[0].parse().unwrap())
        })
        .collect();
    assert_eq!(keys.len(), 100 * 55);
    assert!(keys.windows(2).all(|w| w[0].0 < w[1].0
        || (w[0].0 == w[1].0 && (w[0].1 < w[1].1 || (w[0].1 == w[1].1 && w[0].2 <= w[1].2)))));
}

#[test]
fn identical_seeds_give_identical_archives() {
    let dir = TempDir::new().unwrap();
    let (data, _) = simulate(&dir, 10, &["--holdout", "biased"]);
    let (a, b) = (path(&dir, "a.json"), path(&dir, "b.json"));
    assert_ok(&fit(&data, &a, &["--seed", "4"]));
    assert_ok(&fit(&data, &b, &["--seed", "4"]));
    assert_eq!(load_archive(&a).unwrap().0, load_archive(&b).unwrap().0);
}

#[test]
fn config_file_supplies_flags_and_explicit_flags_win() {
    let dir = TempDir::new().unwrap();
    let (data, _) = simulate(&dir, 11, &[]);
    let config = path(&dir, "run.conf");
    std::fs::write(&config, "# short run\nseed = 5\nthin = 2\nimpute = false\n").unwrap();
    let archive = path(&dir, "fit.json");
    assert_ok(&fit(&data, &archive, &["--config", s(&config), "--thin", "8"]));
    let (loaded, manifest) = load_archive(&archive).unwrap();
    assert_eq!(loaded.len(), 10);
    assert_eq!(manifest.settings["seed"], "5");
    assert_eq!(manifest.settings["thin"], "8");
}

#[test]
fn multiple_chains_feed_convergence_report() {
    let dir = TempDir::new().unwrap();
    let (data, _) = simulate(&dir, 12, &[]);
    let archive = path(&dir, "fit.json");
    assert_ok(&fit(&data, &archive, &["--chains", "2"]));
    let chains: Vec<PathBuf> = (0..2).map(|c| path(&dir, &format!("fit.chain{c}.json"))).collect();
    let report = path(&dir, "report.json");
    let mut args = vec!["diagnose", "--out", s(&report), "--archive"];
    args.extend(chains.iter().map(|c| s(c)));
    assert_ok(&covreg(&args));
    let doc = read_json(&report);
    let conv = &doc["payload"]["convergence"][0];
    assert_eq!(conv["chains"], 2);
    assert!(!conv["psrf"].as_object().unwrap().is_empty());
}
