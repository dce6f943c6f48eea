use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;
use svexp_cli::{model_iv, safe_theta};
use svexp_core::blackscholes::strike_atm;
use svexp_core::curve::{MarketState, Model, ModelParams, PiecewiseCurve, MaturityGrid};
use svexp_core::schema::ParamsFile;

fn svexp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svexp")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("svexp-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn price_prints_every_term() {
    let out = svexp(&["price", "--T", "0.0833333", "--strike", "atm"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    for key in [
        "price", "implied_vol", "xhat", "yhat", "term_xi2", "term_var_int", "term_mixed", "zeroth_order", "d_xx", "d_yy",
        "d_xy", "diagnostics", "feller",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["price"].as_f64().unwrap() > 0.0);
}

#[test]
fn price_reads_parameter_files() {
    let (m, p) = svexp_cli::safe_set(Model::Heston, 0.5).unwrap();
    let path = scratch("params.json");
    std::fs::write(&path, ParamsFile::from_model(&m, &p).unwrap().to_json()).unwrap();
    let from_file = json(&svexp(&["price", "--params", path.to_str().unwrap(), "--T", "0.5", "--strike", "97"]));
    let safe = json(&svexp(&["price", "--T", "0.5", "--strike", "97"]));
    assert_eq!(from_file, safe);
}

#[test]
fn call_differs_from_put_only_in_zeroth_order() {
    let put = json(&svexp(&["price", "--T", "0.5", "--strike", "98"]));
    let call = json(&svexp(&["price", "--T", "0.5", "--strike", "98", "--kind", "call"]));
    for key in ["xhat", "yhat", "term_xi2", "term_var_int", "term_mixed", "d_xx", "d_yy", "d_xy"] {
        assert_eq!(put[key], call[key], "{key}");
    }
    assert_ne!(put["zeroth_order"], call["zeroth_order"]);
}

#[test]
fn exit_codes_follow_the_error_class() {
    assert_eq!(svexp(&["price", "--model", "garch", "--rho", "-0.3", "--T", "0.5"]).status.code(), Some(3));
    assert_eq!(svexp(&["price", "--T", "abc"]).status.code(), Some(2));
    assert_eq!(svexp(&["price", "--T", "0.5", "--strike", "d50"]).status.code(), Some(2));
    assert_eq!(svexp(&["price", "--T", "0.5", "--params", "/nonexistent.json"]).status.code(), Some(2));
    assert_eq!(svexp(&["sensitivity", "--sweep", "sigma=1,2"]).status.code(), Some(2));
    assert_eq!(svexp(&["sensitivity", "--sweep", "kappa=1", "--sweep", "theta=0.01"]).status.code(), Some(2));
    assert_eq!(svexp(&["sensitivity", "--model", "garch", "--sweep", "rho=-0.2", "--paths", "100"]).status.code(), Some(3));
}

#[test]
fn sensitivity_output_is_byte_identical_across_runs() {
    let run = |name: &str| {
        let path = scratch(name);
        let out = svexp(&[
            "sensitivity", "--model", "garch", "--sweep", "lambda=0,0.4", "--T", "0.0833333,0.25", "--paths", "4000", "--steps-per-day", "2",
            "--seed", "7", "--out", path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(path).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let text = String::from_utf8(a).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 1 + 2 * 2 * 3);
    // Deterministic variance with ρ = 0: only the time discretisation is left.
    for row in rows.iter().skip(1).filter(|r| r.starts_with("lambda,0,")) {
        let err: f64 = row.split(',').nth(8).unwrap().parse().unwrap();
        assert!(err.abs() < 0.01, "{row}");
    }
}

#[test]
fn mc_validate_passes_on_the_safe_set() {
    let out = svexp(&["mc-validate", "--T", "0.25", "--paths", "4000", "--steps-per-day", "2", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2 + 9);
}

fn ladder() -> (MarketState<f64>, ModelParams<f64>) {
    let times = vec![0.0, 1.0 / 12.0, 0.25];
    let grid = MaturityGrid::new(times).unwrap();
    let c = |v: Vec<f64>| PiecewiseCurve::new(grid.clone(), v).unwrap();
    let p = ModelParams::new(
        Model::Heston,
        c(vec![5.0, 5.0]),
        c(vec![safe_theta(1.0 / 12.0), safe_theta(0.25)]),
        c(vec![0.414, 0.414]),
        c(vec![-0.391, -0.391]),
        0.0036,
    )
    .unwrap();
    (MarketState::flat(100.0, 0.02, 0.0, 0.25).unwrap(), p)
}

fn write_calibration_inputs(max_iterations: usize) -> (PathBuf, PathBuf) {
    let (m, truth) = ladder();
    let mut csv = String::from("maturity,strike_or_delta,delta_flag,iv,weight\n");
    for t in [1.0 / 12.0, 0.25] {
        let f = strike_atm(&m, t).unwrap();
        for k in [0.97 * f, f, 1.02 * f] {
            csv.push_str(&format!("{t},{k},0,{},1\n", model_iv(&m, &truth, k, t).unwrap()));
        }
    }
    let mut guess = ParamsFile::from_model(&m, &truth).unwrap();
    guess.theta = vec![0.03, 0.03];
    let config = format!(
        r#"{{"max_iterations":{max_iterations},"vol_tolerance_bp":0.001,"free":["theta"],"initial":{}}}"#,
        guess.to_json()
    );
    let tag = max_iterations.to_string();
    let (q, c) = (scratch(&format!("quotes{tag}.csv")), scratch(&format!("config{tag}.json")));
    std::fs::write(&q, csv).unwrap();
    std::fs::write(&c, config).unwrap();
    (q, c)
}

#[test]
fn calibrate_writes_report_and_fitted_file() {
    let (q, c) = write_calibration_inputs(400);
    let fitted = scratch("fitted.json");
    let out = svexp(&["calibrate", "--quotes", q.to_str().unwrap(), "--config", c.to_str().unwrap(), "--out", fitted.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert_eq!(report["buckets"].as_array().unwrap().len(), 2);
    let p = ParamsFile::load(&fitted).unwrap();
    assert!((p.theta[0] - 0.019).abs() < 1e-4 && (p.theta[1] - 0.011).abs() < 1e-4, "{:?}", p.theta);
}

#[test]
fn failed_bucket_exits_numeric_after_writing() {
    let (q, c) = write_calibration_inputs(1);
    let fitted = scratch("fitted-failed.json");
    let out = svexp(&["calibrate", "--quotes", q.to_str().unwrap(), "--config", c.to_str().unwrap(), "--out", fitted.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(json(&out)["buckets"][0]["failed"].as_bool().unwrap());
    assert!(ParamsFile::load(&fitted).is_ok());
}
