use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use egf::io;
use egf_core::data::{gen_toy, Toy};
use tempfile::TempDir;

const SMALL: &str = r#"{
  "family_spec": {"preset": "torus-il-4"},
  "model": {"layout": [8, 8]},
  "train": {"loss": "kl-weakfm", "steps": 4, "batch": 16, "B": 4, "t_max": 8},
  "data": {"source": "toy:checkerboard", "n": 400, "seed": 3, "val_fraction": 0.25},
  "eval": {"grid": 16, "tv_grid": 8, "every": 2, "n_mc": 256, "n_chains": 64}
}"#;

fn egf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egf")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

/// Trains the small IL config into `dir/run` and returns the run directory.
fn train_small(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, SMALL);
    let out = dir.join("run");
    let o = egf(&["train-il", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "train-il failed: {}", String::from_utf8_lossy(&o.stderr));
    out
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn train_writes_artifacts() {
    let dir = TempDir::new().unwrap();
    let out = train_small(dir.path());
    for f in ["config.json", "metrics.csv", "checkpoint.json", "report.json", "data-manifest.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(out.join("checkpoints/step-000004.json").exists());
    let rows = csv_rows(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("data-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_train"], 300);
    assert_eq!(manifest["n_val"], 100);
}

#[test]
fn metrics_are_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let ma = std::fs::read(train_small(a.path()).join("metrics.csv")).unwrap();
    let mb = std::fs::read(train_small(b.path()).join("metrics.csv")).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn invalid_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "{\"train\": ");
    let o = egf(&["train-rl", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config-schema"));

    let cfg = write_config(dir.path(), r#"{"family_spec": {"preset": "torus-rl-16"}, "trian": {}}"#);
    let o = egf(&["train-rl", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_toy_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let o = egf(&[
        "train-il",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--data.source=toy:moons",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown-toy"));
}

#[test]
fn commands_on_a_checkpoint() {
    let dir = TempDir::new().unwrap();
    let run = train_small(dir.path());
    let ck = run.join("checkpoint.json");
    let ck = ck.to_str().unwrap();
    let out = dir.path().join("eval");
    let out_s = out.to_str().unwrap();

    let o = egf(&["sample", "--checkpoint", ck, "--n", "1000", "--t-max", "16", "--out-dir", out_s, "--seed", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("samples.csv"));
    assert_eq!(rows.len(), 1000);
    assert!(rows.iter().all(|r| r.iter().all(|x| (0.0..1.0).contains(&x.parse::<f64>().unwrap()))));

    let o = egf(&["density-grid", "--checkpoint", ck, "--resolution", "32", "--out-dir", out_s]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "1024");
    assert_eq!(csv_rows(&out.join("density.csv")).len(), 1024);
    assert!(std::fs::read(out.join("density.pgm")).unwrap().starts_with(b"P5"));

    let cfg = write_config(dir.path(), SMALL);
    let cfg = cfg.to_str().unwrap();
    let o = egf(&["eval-nll", "--config", cfg, "--checkpoint", ck, "--dataset", "toy:checkerboard", "--out-dir", out_s]);
    assert!(o.status.success());
    assert!(stdout(&o).parse::<f64>().unwrap().is_finite());

    let o = egf(&[
        "filter-scan",
        "--config",
        cfg,
        "--checkpoint",
        ck,
        "--dataset",
        "toy:checkerboard",
        "--k-grid",
        "2,inf,0,0.5",
        "--out-dir",
        out_s,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ks: Vec<String> = csv_rows(&out.join("filter_scan.csv")).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(ks, ["2", "inf", "0", "0.5"]);
}

#[test]
fn incompatible_checkpoint_exits_3() {
    let dir = TempDir::new().unwrap();
    let run = train_small(dir.path());
    let text = std::fs::read_to_string(run.join("checkpoint.json")).unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, text.replace("\"version\":1", "\"version\":99")).unwrap();
    let o = egf(&["density-grid", "--checkpoint", bad.to_str().unwrap(), "--resolution", "8"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("incompatible-checkpoint"));

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["params"].as_array_mut().unwrap().pop();
    std::fs::write(&bad, v.to_string()).unwrap();
    let o = egf(&["density-grid", "--checkpoint", bad.to_str().unwrap(), "--resolution", "8"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn diag_mixing_writes_curve() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = egf(&["diag-mixing", "--family", "torus-il-4", "--n-steps", "5", "--resolution", "32", "--out-dir", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&dir.path().join("mixing.csv"));
    assert_eq!(rows.len(), 6);
    let g: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(g[5] < g[0]);
}

#[test]
fn dataset_csv_round_trip() {
    let dir = TempDir::new().unwrap();
    let data = gen_toy(Toy::TwoSpirals, 1000, 4).unwrap().split(0.1, 4).unwrap();
    assert_eq!((data.train.len(), data.val.len()), (900, 100));
    let path = dir.path().join("spiral.csv");
    io::write_dataset(&path, &data).unwrap();
    let back = io::read_torus_csv(&path, 2).unwrap();
    assert_eq!(back.skipped, 0);
    assert_eq!(back.points.len(), data.len());
    for (a, b) in back.points.iter().zip(&data.points) {
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= 1e-12));
    }
}

#[test]
fn sphere_dataset_round_trip() {
    let dir = TempDir::new().unwrap();
    let data = egf_core::data::gen_volcano_like(500, 2).unwrap();
    let path = dir.path().join("volcano.csv");
    io::write_dataset(&path, &data).unwrap();
    let back = io::read_latlon_csv(&path, "lat", "lon").unwrap();
    assert_eq!(back.points.len(), 500);
    for (a, b) in back.points.iter().zip(&data.points) {
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= 1e-12));
    }
}
