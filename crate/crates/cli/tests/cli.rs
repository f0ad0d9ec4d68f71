use std::process::{Command, Output};

fn stockbound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stockbound"))
        .args(args)
        .env_remove("STOCKBOUND_SEED")
        .output()
        .expect("binary runs")
}

fn table(out: &Output) -> Vec<Vec<String>> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<Option<f64>> {
    let idx = rows[0]
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    rows[1..].iter().map(|r| r[idx].parse().ok()).collect()
}

#[test]
fn compute_single_delta() {
    let out = stockbound(&[
        "compute", "--model", "gauss2", "--sigma", "1", "--rho", "0.9", "--L", "10", "--delta", "0.05",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = table(&out);
    assert_eq!(
        rows[0],
        [
            "delta",
            "ss_pre",
            "ss_pro",
            "ss_rig",
            "p_pre",
            "p_pro",
            "p_rig",
            "ratio_pro",
            "ratio_pre"
        ]
    );
    assert_eq!(rows.len(), 2);
    let ratio = column(&rows, "ratio_pro")[0].unwrap();
    assert!((1.2..=1.9).contains(&ratio), "{ratio}");
    let ss_pro = column(&rows, "ss_pro")[0].unwrap();
    assert!((ss_pro - (10.0 * 1.9 * 20f64.ln()).sqrt()).abs() < 1e-12);
}

#[test]
fn compute_rejects_bad_input_with_exit_2() {
    assert_eq!(stockbound(&["compute", "--model", "gauss2"]).status.code(), Some(2));
    assert_eq!(stockbound(&["compute", "--delta", "1.5"]).status.code(), Some(2));
    assert_eq!(
        stockbound(&["compute", "--delta", "0.1", "--rho", "-1.5"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        stockbound(&["compute", "--delta", "0.1", "--model", "gauss9"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(stockbound(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn compute_univariate_and_negative_rho() {
    let out = stockbound(&["compute", "--model", "gauss1", "--delta", "0.05"]);
    assert!(out.status.success());
    let rows = table(&out);
    let pre = column(&rows, "ss_pre")[0].unwrap();
    assert!((pre - 5.2015).abs() < 1e-4);
    let out = stockbound(&["compute", "--rho", "-0.5", "--grid", "0.01,0.1"]);
    assert!(out.status.success());
    assert_eq!(table(&out).len(), 3);
}

#[test]
fn fig1_grid_and_endpoint() {
    let out = stockbound(&["figure", "fig1"]);
    assert!(out.status.success());
    let rows = table(&out);
    assert_eq!(rows[0], ["delta", "ratio_pro", "ratio_pre"]);
    assert_eq!(rows.len(), 41);
    let deltas = column(&rows, "delta");
    let ratios = column(&rows, "ratio_pro");
    assert_eq!(deltas[0], Some(0.001));
    assert_eq!(deltas[39], Some(0.5));
    // the rigorous stock is 0 at delta = 0.5, so the ratio is undefined there
    assert_eq!(ratios[39], None);
    for r in ratios.iter().flatten() {
        assert!(r.is_finite() && *r >= 1.0);
    }
}

#[test]
fn fig2_proposed_never_exceeds_target() {
    let out = stockbound(&["figure", "fig2"]);
    assert!(out.status.success());
    let rows = table(&out);
    for (pro, pre) in column(&rows, "stockout_ratio_pro")
        .iter()
        .zip(column(&rows, "stockout_ratio_pre"))
    {
        assert!(pro.unwrap() <= 1.0);
        assert!(pre.unwrap() > 1.0);
    }
}

#[test]
fn figest_error_shrinks_with_samples() {
    let out = stockbound(&["figure", "figest", "--seed", "1"]);
    assert!(out.status.success());
    let rows = table(&out);
    assert_eq!(
        rows[0],
        ["u", "error_m100", "error_m1000", "error_m10000", "error_m100000"]
    );
    assert_eq!(rows.len(), 22);
    let us = column(&rows, "u");
    let small = column(&rows, "error_m100");
    let large = column(&rows, "error_m100000");
    for i in 0..us.len() {
        if us[i] == Some(0.0) {
            assert_eq!((small[i], large[i]), (Some(0.0), Some(0.0)));
        } else {
            assert!(large[i].unwrap() < small[i].unwrap(), "u = {:?}", us[i]);
        }
    }
    assert_eq!(stockbound(&["figure", "figest"]).status.code(), Some(2));
}

#[test]
fn validate_passes_at_proposed_stock() {
    let out = stockbound(&["validate", "--trials", "1000000", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let rows = table(&out);
    assert_eq!(rows[1].last().unwrap(), "pass");
}

#[test]
fn validate_fails_without_stock() {
    let out = stockbound(&[
        "validate", "--ss", "0", "--delta", "0.01", "--trials", "100000", "--seed", "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let rows = table(&out);
    let rate = column(&rows, "empirical_rate")[0].unwrap();
    // P(0) = 1/4 + asin(0.9) / (2 pi)
    assert!((rate - 0.4282).abs() < 0.005, "{rate}");
    assert_eq!(rows[1].last().unwrap(), "fail");
}

#[test]
fn validate_input_errors() {
    assert_eq!(stockbound(&["validate"]).status.code(), Some(2));
    assert_eq!(
        stockbound(&["validate", "--seed", "1", "--trials", "10"]).status.code(),
        Some(2)
    );
}

#[test]
fn runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = stockbound(&[
            "validate",
            "--trials",
            "100000",
            "--seed",
            "7",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        assert!(out.stdout.is_empty());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let f1 = stockbound(&["figure", "fig1"]).stdout;
    assert_eq!(f1, stockbound(&["figure", "fig1"]).stdout);
}

#[test]
fn seed_from_environment() {
    let run = |env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_stockbound"));
        cmd.args(["figure", "figest", "--u", "0.5"])
            .env_remove("STOCKBOUND_SEED");
        if let Some(s) = env {
            cmd.env("STOCKBOUND_SEED", s);
        }
        cmd.output().unwrap()
    };
    let env = run(Some("4"));
    assert!(env.status.success());
    assert_eq!(
        env.stdout,
        stockbound(&["figure", "figest", "--u", "0.5", "--seed", "4"]).stdout
    );
    assert_eq!(run(None).status.code(), Some(2));
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"type": "gaussian", "mu": [0, 0], "sigma": [[1, 0.9], [0.9, 1]]}, "L": 10, "delta": 0.05}"#,
    )
    .unwrap();
    let from_file = stockbound(&["compute", "--config", cfg.to_str().unwrap()]);
    assert!(
        from_file.status.success(),
        "{}",
        String::from_utf8_lossy(&from_file.stderr)
    );
    let from_flags = stockbound(&["compute", "--delta", "0.05"]);
    assert_eq!(from_file.stdout, from_flags.stdout);

    std::fs::write(&cfg, r#"{"delta": 0.05, "unknown": 1}"#).unwrap();
    assert_eq!(
        stockbound(&["compute", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn empirical_model_compute_and_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("demand.csv");
    let mut text = String::from("d\n");
    // deterministic spread of 400 values around 3
    for i in 0..400 {
        text.push_str(&format!("{}\n", 3.0 + ((i * 37 % 400) as f64 - 199.5) / 100.0));
    }
    std::fs::write(&data, text).unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"type": "empirical", "path": "demand.csv", "header": true}, "L": 1, "delta": 0.1}"#,
    )
    .unwrap();
    let out = stockbound(&["compute", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = table(&out);
    assert_eq!(rows[0], ["delta", "ss_pro", "rate", "residual"]);
    let ss = column(&rows, "ss_pro")[0].unwrap();
    assert!(ss > 0.0 && ss < 2.0, "{ss}");

    let out = stockbound(&[
        "estimate-cgf",
        "--data",
        data.to_str().unwrap(),
        "--header",
        "--u",
        "0,1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = table(&out);
    assert_eq!(rows.len(), 3);
    assert_eq!(column(&rows, "cgf")[0], Some(0.0));
    assert!(column(&rows, "cgf")[1].unwrap() > 3.0);
    let bad = stockbound(&["estimate-cgf", "--data", data.to_str().unwrap(), "--header", "--u", "9"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn weibull_model_compute() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"type": "weibull", "shape": 2, "scale": 1}, "L": 5, "grid": [0.01, 0.1]}"#,
    )
    .unwrap();
    let out = stockbound(&["compute", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ss = column(&table(&out), "ss_pro");
    assert!(ss[0].unwrap() > ss[1].unwrap() && ss[1].unwrap() > 0.0);
}
