use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sepspike(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sepspike"))
        .args(args)
        .env_remove("SEPSPIKE_SEED")
        .env_remove("SEPSPIKE_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn misspelled_subcommand_names_the_token() {
    let o = sepspike(&["experimnet"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("experimnet"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "p = 100\nn = 100\nspikes_a = []\n");
    let o = sepspike(&["law", "--config", &cfg, "--edge-only"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("spikes_a"), "{}", stderr(&o));
}

#[test]
fn edge_only_json_for_mp() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "mp.toml", "p = 100\nn = 100\n");
    let o = sepspike(&["law", "--config", &cfg, "--edge-only", "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["lambda_plus"].as_f64().unwrap() - 4.0).abs() < 1e-8);
}

#[test]
fn set_overrides_config_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "mp.toml", "p = 100\nn = 100\n");
    // d = 3/4 gives lambda_+ = (1 + sqrt 0.75)^2
    let o = sepspike(&[
        "law",
        "--config",
        &cfg,
        "--set",
        "n=400",
        "--set",
        "p=300",
        "--edge-only",
        "--json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let expected = (1.0 + 0.75f64.sqrt()).powi(2);
    assert!((v["lambda_plus"].as_f64().unwrap() - expected).abs() < 1e-8);
}

#[test]
fn density_csv_has_header_and_lf_endings() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("law");
    let o = sepspike(&[
        "law",
        "--set",
        "p=100",
        "--set",
        "n=100",
        "--grid",
        "0.5:3.5:31",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("density.csv")).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "E,rho_c,re_m1,im_m1,re_m2,im_m2");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|t| t.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 31);
    // MP density at E = 2 with d = 1: sqrt(4E - E^2) / (2 pi E)
    let row = rows.iter().find(|r| (r[0] - 2.0).abs() < 1e-12).unwrap();
    let exact = (8.0f64 - 4.0).sqrt() / (4.0 * std::f64::consts::PI);
    assert!((row[1] - exact).abs() < 1e-3, "{} vs {exact}", row[1]);
    assert!(out.join("edge.json").exists());
}

#[test]
fn predict_reports_outlier() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        "p = 400\nn = 400\nspikesA = [{ index = 1, d = 2.0 }]\n",
    );
    let o = sepspike(&["predict", "--config", &cfg, "--json", "--overlap", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let theta = v["predictions"]["outliers"][0]["theta"].as_f64().unwrap();
    assert!((theta - 4.5).abs() < 1e-8);
    let z = v["overlap"]["entries"][0]["z_value"].as_f64().unwrap();
    assert!((z - 0.5).abs() < 1e-8);
}

#[test]
fn sample_is_reproducible_and_coupled() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        "p = 40\nn = 60\nspikesA = [{ index = 1, d = 3.0 }]\n",
    );
    let args = ["sample", "--config", &cfg, "--reps", "2", "--seed", "5", "--coupled"];
    let a = sepspike(&args);
    let b = sepspike(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "rep,index,lambda,lambda_unspiked");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|t| t.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 80);
    for r in &rows {
        assert!(r[2] >= r[3] - 1e-10, "interlacing lower bound");
    }
}

#[test]
fn sample_writes_draws_and_overlaps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = sepspike(&[
        "sample",
        "--set",
        "p=30",
        "--set",
        "n=50",
        "--law",
        "student_t:6",
        "--reps",
        "3",
        "--overlaps",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for r in 0..3 {
        let text = fs::read_to_string(out.join(format!("draw_{r:04}.csv"))).unwrap();
        assert!(text.starts_with("index,lambda\n"));
        assert_eq!(text.lines().count(), 31);
    }
    let ov = fs::read_to_string(out.join("overlaps.csv")).unwrap();
    assert_eq!(ov.lines().count(), 1 + 3 * 2 * 2 * 2);
}

#[test]
fn estimate_counts_and_shrinkage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        "p = 200\nn = 200\nspikesA = [{ index = 1, d = 5.0 }]\n",
    );
    let o = sepspike(&[
        "estimate",
        "--config",
        &cfg,
        "--seed",
        "3",
        "--calibrate",
        "200",
        "0.05",
        "--counts",
        "--adaptive",
        "--shrink",
        "--json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["counts"]["q"]["value"], 1);
    assert_eq!(v["counts"]["q_a"]["value"], 1);
    assert_eq!(v["counts"]["q_b"]["value"], 0);
    assert_eq!(v["r_plus_s"], 1);
    let sigma = v["adaptive"][0]["sigma_hat"].as_f64().unwrap();
    assert!((sigma - 6.0).abs() < 1.5, "{sigma}");
    let shrunk = v["shrink"]["shrunk"][0].as_f64().unwrap();
    assert!(shrunk > 1.0);
}

#[test]
fn estimate_from_data_file() {
    let dir = tempfile::tempdir().unwrap();
    // Y = diag(3, 1, 0.5) padded to 3 x 4, so Q = diag(9, 1, 0.25)
    let data = write(dir.path(), "y.csv", "3,0,0,0\n0,1,0,0\n0,0,0.5,0\n");
    let o = sepspike(&["estimate", "--data", &data, "--adaptive", "--rank", "1", "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["source"], "data");
    assert!((v["top_eigenvalues"][0].as_f64().unwrap() - 9.0).abs() < 1e-10);
    // A reading: -4 / (1/(1-9) + 1/(0.25-9) + 1/(0-9))
    let expected = -4.0 / (1.0 / -8.0 + 1.0 / -8.75 + 1.0 / -9.0);
    let got = v["adaptive_by_index"][0]["sigma_hat_a"].as_f64().unwrap();
    assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
}

#[test]
fn estimate_requires_a_threshold_for_counts() {
    let o = sepspike(&["estimate", "--set", "p=50", "--set", "n=50", "--counts"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--omega"), "{}", stderr(&o));
}

#[test]
fn experiment_writes_report_and_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let cfg = write(
        dir.path(),
        "e.toml",
        "kind = \"sticking\"\nreps = 4\n[model]\np = 80\nn = 100\nspikesA = []\n",
    );
    let o = sepspike(&[
        "experiment",
        "sticking",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["reps"], 4);
    assert_eq!(report["passed"], true);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("metric,count,mean,sd,std_error,min,q05,q50,q95,max\n"));
    assert!(out.join("metrics").join("interlacing.csv").exists());
}

#[test]
fn experiment_fails_with_zero_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let o = sepspike(&[
        "experiment",
        "outlier-location",
        "--set",
        "model.p=100",
        "--set",
        "model.n=100",
        "--reps",
        "5",
        "--tolerance",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stdout(&o).contains("[FAIL]"));
}

#[test]
fn experiment_seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let o = Command::new(env!("CARGO_BIN_EXE_sepspike"))
        .args([
            "experiment",
            "local-law",
            "--reps",
            "2",
            "--set",
            "model.p=60",
            "--set",
            "model.n=60",
        ])
        .args(["--out", out.to_str().unwrap(), "--json"])
        .env("SEPSPIKE_SEED", "77")
        .env("SEPSPIKE_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["seed"], 77);
}

#[test]
fn verify_closed_form_criteria() {
    let o = sepspike(&["verify", "--only", "1,2"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("[PASS] criterion  1"));
    assert!(text.contains("[PASS] criterion  2"));
}

#[test]
fn verify_rejects_unknown_criterion() {
    let o = sepspike(&["verify", "--only", "42"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("42"));
}

#[test]
fn verify_zero_tolerance_fails_by_name() {
    let o = sepspike(&["verify", "--only", "1,2", "--tolerance-scale", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains("[FAIL] criterion  1 mp-closed-forms"), "{text}");
    assert!(text.contains("failed: mp-closed-forms"), "{text}");
}
