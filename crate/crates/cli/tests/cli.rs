use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cohort-ledger"));
    c.env_remove("COHORT_LEDGER_SEED");
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).arg("--out").arg(dir).output().unwrap()
}

fn small_data(dir: &Path) {
    fs::write(dir.join("small.conf"), "end_cohort = 2020-12\nseed = 5\n").unwrap();
    let out = run(&["simulate", "--config", dir.join("small.conf").to_str().unwrap()], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const QUICK: [&str; 8] = ["--chains", "2", "--tune", "300", "--draws", "300", "--trees", "10"];

fn fit_small(dir: &Path) -> Output {
    let input = dir.join("cohorts.csv");
    let mut args = vec!["fit", "--input", input.to_str().unwrap()];
    args.extend(QUICK);
    run(&args, dir)
}

#[test]
fn simulate_schema_and_determinism() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert!(run(&["simulate"], a.path()).status.success());
    assert!(run(&["simulate"], b.path()).status.success());
    let text = fs::read_to_string(a.path().join("cohorts.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("cohort,period,n_users,n_active_users,revenue"));
    assert_eq!(text, fs::read_to_string(b.path().join("cohorts.csv")).unwrap());
    assert!(a.path().join("generator.json").exists());
}

#[test]
fn invalid_range_exits_2_naming_field() {
    let dir = TempDir::new().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "start_cohort = 2022-01\nend_cohort = 2021-01\n").unwrap();
    let out = run(&["simulate", "--config", conf.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("end_cohort"));
}

#[test]
fn seed_precedence() {
    let env_dir = TempDir::new().unwrap();
    let flag_dir = TempDir::new().unwrap();
    let file_dir = TempDir::new().unwrap();
    let out = bin().args(["simulate", "--out"]).arg(env_dir.path()).env("COHORT_LEDGER_SEED", "9").output().unwrap();
    assert!(out.status.success());
    assert!(run(&["simulate", "--seed", "9"], flag_dir.path()).status.success());
    let read = |d: &TempDir| fs::read_to_string(d.path().join("cohorts.csv")).unwrap();
    assert_eq!(read(&env_dir), read(&flag_dir));

    // the file beats the environment, the flag beats the file
    let conf = file_dir.path().join("c.conf");
    fs::write(&conf, "seed = 9\n").unwrap();
    let out = bin()
        .args(["simulate", "--config", conf.to_str().unwrap(), "--out"])
        .arg(file_dir.path())
        .env("COHORT_LEDGER_SEED", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(read(&file_dir), read(&flag_dir));
    assert!(run(&["simulate", "--config", conf.to_str().unwrap(), "--seed", "10"], file_dir.path()).status.success());
    assert_ne!(read(&file_dir), read(&flag_dir));
}

#[test]
fn bad_mass_and_missing_input_exit_2() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(&["simulate", "--hdi-mass", "1.5"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["fit"], dir.path()).status.code(), Some(2));
    let missing = dir.path().join("nope.csv");
    assert_eq!(run(&["fit", "--input", missing.to_str().unwrap()], dir.path()).status.code(), Some(2));
}

#[test]
fn missing_artifacts_exit_2() {
    let dir = TempDir::new().unwrap();
    small_data(dir.path());
    let input = dir.path().join("cohorts.csv");
    for cmd in ["predict", "interpret", "diagnose"] {
        let out = run(&[cmd, "--input", input.to_str().unwrap()], dir.path());
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("missing artifact"));
    }
}

#[test]
fn fit_writes_artifacts_and_is_repeatable() {
    let dir = TempDir::new().unwrap();
    small_data(dir.path());
    let out = fit_small(dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let diag = fs::read_to_string(dir.path().join("diagnostics.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&diag).unwrap();
    assert_eq!(value["revenue"]["coefficients"].as_object().unwrap().len(), 4);
    for file in ["retention_forests.json", "revenue_posterior.json", "revenue_draws.csv", "run.json"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    assert_eq!(fit_small(dir.path()).status.code(), Some(0));
    assert_eq!(fs::read_to_string(dir.path().join("diagnostics.json")).unwrap(), diag);
}

#[test]
fn unmixed_short_run_exits_3() {
    let dir = TempDir::new().unwrap();
    small_data(dir.path());
    let input = dir.path().join("cohorts.csv");
    let out = run(
        &["fit", "--input", input.to_str().unwrap(), "--tune", "1", "--draws", "100", "--chains", "2", "--trees", "5"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("diagnostics.json").exists());
}

#[test]
fn predict_interpret_diagnose() {
    let dir = TempDir::new().unwrap();
    small_data(dir.path());
    assert_eq!(fit_small(dir.path()).status.code(), Some(0));
    let input = dir.path().join("cohorts.csv");
    let input = input.to_str().unwrap();

    let out = run(&["predict", "--input", input, "--export-draws"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let forecast = fs::read_to_string(dir.path().join("forecast.csv")).unwrap();
    assert_eq!(forecast.lines().next(), Some("cohort,period,horizon,quantity,mean,hdi_low,hdi_high,observed"));
    let coverage: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("coverage.json")).unwrap()).unwrap();
    assert!(coverage["retention"].as_f64().unwrap() > 0.8);
    assert!(dir.path().join("forecast_draws.csv").exists());

    let grid = dir.path().join("grid.csv");
    fs::write(&grid, "cohort,period,n_users\n2020-12,2021-01,400\n2020-12,2021-02,400\n").unwrap();
    let out = run(&["predict", "--grid", grid.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let forecast = fs::read_to_string(dir.path().join("forecast.csv")).unwrap();
    assert!(forecast.contains("2020-12,2021-02,2,revenue,"));

    assert!(run(&["interpret", "--input", input], dir.path()).status.success());
    let pdp = fs::read_to_string(dir.path().join("pdp_ice_month.csv")).unwrap();
    let mut pdp_values = BTreeMap::new();
    let mut ice: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for line in pdp.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let v: f64 = f[3].parse().unwrap();
        if f[2] == "pdp" {
            pdp_values.insert(f[1].to_string(), v);
        } else {
            ice.entry(f[1].to_string()).or_default().push(v);
        }
    }
    assert_eq!(pdp_values.len(), 12);
    for (g, p) in &pdp_values {
        let curves = &ice[g];
        let mean = curves.iter().sum::<f64>() / curves.len() as f64;
        assert!((p - mean).abs() < 1e-12);
    }
    assert!(dir.path().join("importance.csv").exists());

    let out = run(&["diagnose", "--input", input], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(dir.path().join("ppc.csv")).unwrap().starts_with("quantity,x,observed_ecdf"));
}
