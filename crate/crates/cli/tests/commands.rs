use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eigenpool::eigenpool::corpus_energy_curve;
use eigenpool::tudataset::load_tudataset;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eigengcn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

const FAST: [&str; 6] = ["--epochs", "3", "--width", "8", "--levels", "2"];

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out.to_str().unwrap()];
    args.extend(FAST);
    args.extend(extra);
    run(&args)
}

fn column(csv: &str, col: usize) -> Vec<String> {
    csv.lines().skip(1).map(|l| l.split(',').nth(col).unwrap().to_string()).collect()
}

#[test]
fn synthetic_smoke_run_writes_ten_splits_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "split,test_acc,best_valid_acc,best_epoch");
    assert_eq!(lines.len(), 13);
    for (i, line) in lines[1..11].iter().enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0], i.to_string());
        let acc: f64 = f[1].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert!((1..=3).contains(&f[3].parse::<usize>().unwrap()));
        let metrics = fs::read_to_string(dir.path().join(format!("metrics_split{i}.csv"))).unwrap();
        assert_eq!(metrics.lines().count(), 4);
        assert!(dir.path().join(format!("checkpoint_split{i}.json")).is_file());
    }
    assert!(lines[11].starts_with("mean,"));
    assert!(lines[12].starts_with("std,"));
    let accs: Vec<f64> = column(&csv, 1)[..10].iter().map(|s| s.parse().unwrap()).collect();
    let mean: f64 = lines[11].split(',').nth(1).unwrap().parse().unwrap();
    assert!((mean - accs.iter().sum::<f64>() / 10.0).abs() < 1e-12);
}

#[test]
fn flat_and_pooled_runs_are_comparable() {
    let dir = tempfile::tempdir().unwrap();
    let eigen = dir.path().join("eigen");
    let flat = dir.path().join("flat");
    assert!(train(&eigen, &["--model", "eigengcn", "--repeats", "3"]).status.success());
    assert!(train(&flat, &["--model", "flat-gcn", "--repeats", "3"]).status.success());
    let a = fs::read_to_string(eigen.join("results.csv")).unwrap();
    let b = fs::read_to_string(flat.join("results.csv")).unwrap();
    assert_eq!(column(&a, 0), column(&b, 0));
    assert_ne!(a, b);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(train(out, &["--repeats", "2", "--seed", "7"]).status.success());
    }
    for f in ["results.csv", "metrics_split0.csv", "metrics_split1.csv", "checkpoint_split1.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("out");
    fs::write(&cfg, format!("epochs = 5\nrepeats = 2\nwidth = 8\nlevels = 2\nout = {}\n", out.display())).unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--epochs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("metrics_split0.csv")).unwrap().lines().count(), 3);
    assert_eq!(fs::read_to_string(out.join("results.csv")).unwrap().lines().count(), 5);
}

#[test]
fn energy_curve_on_fixture_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixtures();
    let o = run(&[
        "analyze-energy",
        "--dataset",
        "PATHS",
        "--data-dir",
        data.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("energy_curve.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("H,ratio"));
    let hs: Vec<usize> = column(&csv, 0).iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(hs, (1..=40).collect::<Vec<_>>());
    let r: Vec<f64> = column(&csv, 1).iter().map(|s| s.parse().unwrap()).collect();
    assert!(r.windows(2).all(|w| w[1] >= w[0]));
    assert!(r.iter().all(|&v| v <= 1.0 + 1e-12));
    let corpus = load_tudataset(&data.join("PATHS"), "PATHS").unwrap();
    assert_eq!(r, corpus_energy_curve(&corpus.graphs, 40).unwrap());
}

#[test]
fn quick_verify_passes_and_catches_sign_flip() {
    let ok = run(&["verify", "--quick", "--seed", "3"]);
    assert_eq!(ok.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    for p in ["reconstruction", "orthogonality", "energy", "local-parseval", "gradient", "permutation"] {
        assert!(stdout.lines().any(|l| l.starts_with(p) && l.contains("10/10")), "{p}: {stdout}");
    }
    let bad = run(&["verify", "--quick", "--seed", "3", "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&bad.stderr);
    assert!(stderr.contains("reconstruction failed on instance seed"), "{stderr}");
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&["train", "--dataset", "ENZYMES", "--data-dir", dir.path().to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing file"));
    assert_eq!(run(&["train", "--epochs", "0"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--model", "gat"]).status.code(), Some(2));
    assert_eq!(run(&["analyze-energy", "--config", "/nonexistent.cfg"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}
