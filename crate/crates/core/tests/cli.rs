use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmd")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = rmd(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn simulate(dir: &Path, extra: &[&str]) -> String {
    let d = dir.to_str().unwrap();
    let mut args = vec!["simulate", "--seed", "11", "--out-dir", d];
    args.extend_from_slice(extra);
    ok(&args);
    dir.join("series.csv").to_str().unwrap().to_string()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_defaults_and_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    simulate(&a, &[]);
    simulate(&b, &[]);
    assert_eq!(read_dir_sorted(&a), read_dir_sorted(&b));
    let csv = fs::read_to_string(a.join("series.csv")).unwrap();
    assert_eq!(csv.lines().count(), 222);
    assert!(csv.lines().last().unwrap().starts_with("2015Q2,"));

    let clean = tmp.path().join("clean");
    simulate(&clean, &["--rate", "0"]);
    let truth: serde_json::Value = serde_json::from_slice(&fs::read(clean.join("truth.json")).unwrap()).unwrap();
    let inc = truth["truth"]["inclusion"].as_array().unwrap();
    assert_eq!(inc.len(), 221);
    assert!(inc.iter().all(|v| v.as_bool() == Some(true)));
}

#[test]
fn fit_emits_one_block_per_beta() {
    let tmp = tempfile::tempdir().unwrap();
    let series = simulate(&tmp.path().join("sim"), &["--len", "80"]);
    let out = tmp.path().join("fit");
    let o = out.to_str().unwrap();
    ok(&["fit", "--input", &series, "--seed", "2", "--out-dir", o, "--beta", "0.15,1.0", "--n-theta", "32", "--inner-cap", "8"]);
    let fit: serde_json::Value = serde_json::from_slice(&fs::read(out.join("fit.json")).unwrap()).unwrap();
    let blocks = fit["blocks"].as_array().unwrap();
    assert_eq!(blocks.len(), 2);
    for b in blocks {
        for p in b["params"].as_array().unwrap() {
            let (lo, mid, hi) = (p["q025"].as_f64().unwrap(), p["q50"].as_f64().unwrap(), p["q975"].as_f64().unwrap());
            assert!(lo <= mid && mid <= hi);
        }
    }
    assert_eq!(fs::read_to_string(out.join("smoothed_inclusion.csv")).unwrap().lines().count(), 1 + 2 * 80);

    // RMD-X at beta = 1 reports the plain MLE
    let x = tmp.path().join("x");
    let n = tmp.path().join("n");
    ok(&["fit", "--estimator", "rmd-x", "--beta", "1", "--input", &series, "--seed", "2", "--out-dir", x.to_str().unwrap()]);
    ok(&["fit", "--estimator", "none", "--input", &series, "--seed", "2", "--out-dir", n.to_str().unwrap()]);
    let fx: serde_json::Value = serde_json::from_slice(&fs::read(x.join("fit.json")).unwrap()).unwrap();
    let fnone: serde_json::Value = serde_json::from_slice(&fs::read(n.join("fit.json")).unwrap()).unwrap();
    for j in 0..2 {
        assert_eq!(fx["blocks"][0]["params"][j]["estimate"], fnone["blocks"][0]["params"][j]["estimate"]);
    }
}

#[test]
fn evaluate_rows_schedule_and_byte_identical_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let series = simulate(&tmp.path().join("sim"), &["--len", "70"]);
    let cfg = tmp.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"estimator": "rmd-n", "beta_grid": [0.25, 0.5], "horizons": [1, 4], "n_theta": 32, "inner_cap": 8, "seed": 5}"#,
    )
    .unwrap();
    let run = |name: &str, threads: &str| {
        let dir = tmp.path().join(name);
        let out = Command::new(env!("CARGO_BIN_EXE_rmd"))
            .env("RMD_THREADS", threads)
            .args(["evaluate", "--config", cfg.to_str().unwrap(), "--input", &series, "--out-dir", dir.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        dir
    };
    let a = run("a", "1");
    let b = run("b", "3");
    assert_eq!(read_dir_sorted(&a), read_dir_sorted(&b));

    // strategies Q1, Q4, beta=1 times horizons 1, 4
    let report = fs::read_to_string(a.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3 * 2);
    // origins 40..70, one beta per origin per criterion horizon
    let schedule = fs::read_to_string(a.join("beta_schedule.csv")).unwrap();
    assert_eq!(schedule.lines().count(), 1 + 30 * 2);
    assert!(a.join("filtered_means.csv").exists() && a.join("smoothed_inclusion.csv").exists());

    let single = tmp.path().join("single");
    ok(&[
        "evaluate", "--estimator", "rmd-x", "--beta-grid", "1.0", "--horizons", "1", "--n-paths", "4", "--input", &series,
        "--seed", "1", "--out-dir", single.to_str().unwrap(),
    ]);
    let report = fs::read_to_string(single.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
    assert!(report.lines().nth(1).unwrap().contains(",beta=1,"));
}

#[test]
fn select_beta_and_forecast_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let series = simulate(&tmp.path().join("sim"), &["--len", "60"]);
    let sb = tmp.path().join("sb");
    ok(&[
        "select-beta", "--estimator", "rmd-x", "--beta-grid", "0.5,1", "--horizons", "1,4", "--n-paths", "4", "--input",
        &series, "--seed", "3", "--out-dir", sb.to_str().unwrap(),
    ]);
    let sel: serde_json::Value = serde_json::from_slice(&fs::read(sb.join("selected_beta.json")).unwrap()).unwrap();
    assert_eq!(sel.as_array().unwrap().len(), 2);
    assert_eq!(fs::read_to_string(sb.join("msfe_by_beta.csv")).unwrap().lines().count(), 1 + 2 * 2);

    let fc = tmp.path().join("fc");
    ok(&[
        "forecast", "--estimator", "rmd-n", "--beta", "0.5", "--horizons", "1,12", "--n-theta", "16", "--inner-cap", "4",
        "--input", &series, "--seed", "3", "--out-dir", fc.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(fc.join("forecast.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(2).unwrap().starts_with("1975Q1,0.5,12,"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let series = simulate(&tmp.path().join("sim"), &["--len", "30"]);
    let code = |args: &[&str]| rmd(args).status.code().unwrap();
    assert_eq!(code(&["fit", "--input", &series]), 2, "missing seed");
    assert_eq!(code(&["fit", "--seed", "1", "--input", "/nonexistent.csv"]), 2);
    assert_eq!(code(&["fit", "--seed", "1", "--input", &series, "--model", "garch"]), 2);
    assert_eq!(code(&["fit", "--seed", "1", "--input", &series, "--beta", "1.5"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let under = blocker.join("out");
    assert_eq!(code(&["simulate", "--seed", "1", "--out-dir", under.to_str().unwrap()]), 4);
    assert_eq!(
        code(&["fit", "--estimator", "rmd-x", "--beta", "0.05", "--seed", "1", "--input", &series, "--out-dir", tmp.path().to_str().unwrap()]),
        2,
        "two included observations cannot identify the model"
    );
}
