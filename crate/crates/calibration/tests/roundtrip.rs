use svexp_calib::{
    bootstrap_calibrate, objective_eval, Bucket, CalibConfig, Calibrator, IntervalParams, Moneyness, Param, Quote, QuoteSet,
};
use svexp_core::blackscholes::{implied_vol, strike_atm};
use svexp_core::curve::{MarketState, MaturityGrid, Model, ModelParams, OptionKind, OptionSpec, PiecewiseCurve};
use svexp_core::operators::OperatorState;
use svexp_core::pricing::price2;

fn market(h: f64) -> MarketState<f64> {
    MarketState::flat(100.0, 0.02, 0.0, h).unwrap()
}

fn params(model: Model, times: &[f64], kappa: f64, theta: &[f64], lambda: f64, rho: f64) -> ModelParams<f64> {
    let g = MaturityGrid::new(times.to_vec()).unwrap();
    let c = |v| PiecewiseCurve::constant(g.clone(), v);
    ModelParams::new(model, c(kappa), PiecewiseCurve::new(g.clone(), theta.to_vec()).unwrap(), c(lambda), c(rho), 0.0036).unwrap()
}

fn ladder() -> ModelParams<f64> {
    params(Model::Heston, &[0.0, 1.0 / 12.0, 0.25, 0.5, 1.0], 5.0, &[0.019, 0.011, 0.009, 0.009], 0.414, -0.391)
}

/// Engine-generated quotes at three strikes around the forward per bucket.
fn synthetic(m: &MarketState<f64>, truth: &ModelParams<f64>) -> QuoteSet {
    let buckets = truth.grid().times()[1..]
        .iter()
        .map(|&t| {
            let f = strike_atm(m, t).unwrap();
            let (rd, rf) = m.rate_integrals(t).unwrap();
            let quotes = [-1.0, 0.0, 1.0]
                .iter()
                .enumerate()
                .map(|(j, z)| {
                    let k = f * (0.04 * z * t.sqrt()).exp();
                    let p = price2(m, truth, &OptionSpec::put(k, t).unwrap()).unwrap().price;
                    let iv = implied_vol(p, 100.0, k, rd, rf, t, OptionKind::Put).unwrap();
                    Quote { moneyness: Moneyness::Strike(k), iv, weight: 1.0 + j as f64 }
                })
                .collect();
            Bucket { maturity: t, quotes }
        })
        .collect();
    QuoteSet::new(buckets).unwrap()
}

fn guess_from(truth: &ModelParams<f64>, theta: f64, lambda: f64) -> ModelParams<f64> {
    let n = truth.grid().len();
    params(truth.model, truth.grid().times(), truth.kappa.value(0), &vec![theta; n], lambda, truth.rho.value(0))
}

fn tight(guess: ModelParams<f64>) -> CalibConfig {
    CalibConfig { vol_tolerance_bp: 1e-7, max_iterations: 600, free: vec![Param::Theta, Param::Lambda], ..CalibConfig::new(guess) }
}

#[test]
fn truth_is_a_fixed_point() {
    let truth = params(Model::Heston, &[0.0, 1.0 / 12.0], 5.0, &[0.019], 0.414, -0.391);
    let m = market(1.0 / 12.0);
    let q = synthetic(&m, &truth);
    let r = bootstrap_calibrate(&m, &q, &CalibConfig::new(truth.clone()), Model::Heston).unwrap();
    assert!(r.buckets[0].iterations <= 2);
    assert!(r.per_bucket_residual_bp()[0] <= 1e-8, "{:?}", r.per_bucket_residual_bp());
    assert!(!r.buckets[0].failed);
}

#[test]
fn ladder_round_trip() {
    let (m, truth) = (market(1.0), ladder());
    let q = synthetic(&m, &truth);
    let r = bootstrap_calibrate(&m, &q, &tight(guess_from(&truth, 0.015, 0.3)), Model::Heston).unwrap();
    for (i, b) in r.buckets.iter().enumerate() {
        assert!(!b.failed, "bucket {i}: {:?}", b.diagnostic);
        assert!(b.max_residual_bp <= 0.01, "bucket {i}: {}", b.max_residual_bp);
        let th = truth.theta.value(i);
        assert!((b.fitted.theta - th).abs() <= 1e-4 * th, "bucket {i}: {} vs {th}", b.fitted.theta);
        for (j, &n) in b.advance_counts.iter().enumerate() {
            assert_eq!(n == 0, j != i, "bucket {i} advanced interval {j} {n} times");
        }
    }
}

#[test]
fn resumed_calibration_matches_uninterrupted() {
    let (m, truth) = (market(1.0), ladder());
    let q = synthetic(&m, &truth);
    let cfg = tight(guess_from(&truth, 0.015, 0.3));
    let whole = bootstrap_calibrate(&m, &q, &cfg, Model::Heston).unwrap();

    let mut first = Calibrator::new(m.clone(), q.clone(), cfg.clone()).unwrap();
    first.calibrate_next().unwrap();
    first.calibrate_next().unwrap();
    let ck = first.checkpoint().unwrap();
    drop(first);
    let resumed = Calibrator::restore(&ck, m.clone(), q.clone(), cfg).unwrap().run().unwrap();

    assert_eq!(resumed.fitted.theta.values(), whole.fitted.theta.values());
    assert_eq!(resumed.fitted.lambda.values(), whole.fitted.lambda.values());
    for t in [0.2, 0.5, 0.9] {
        let o = OptionSpec::put(99.0, t).unwrap();
        let a = price2(&m, &whole.fitted, &o).unwrap().price;
        let b = price2(&m, &resumed.fitted, &o).unwrap().price;
        assert!((a - b).abs() <= 1e-12, "{a} {b}");
    }
    // Later buckets never advanced the restored intervals.
    assert!(resumed.buckets[2].advance_counts[..2].iter().all(|&n| n == 0));
}

#[test]
fn objective_behaves() {
    let (m, truth) = (market(1.0), ladder());
    let q = synthetic(&m, &truth);
    let b = &q.buckets[0];
    let strikes: Vec<f64> = b.quotes.iter().map(|x| x.strike(&m, b.maturity).unwrap()).collect();
    let mut st = OperatorState::new(truth.grid().clone());
    let at = |st: &mut OperatorState<f64>, theta: f64, bucket: &Bucket, ks: &[f64]| {
        let c = IntervalParams { theta, ..IntervalParams::of(&truth, 0) };
        objective_eval(st, &m, &truth, 0, &c, bucket, ks).unwrap().value
    };
    assert!(at(&mut st, 0.019, b, &strikes) <= 1e-16);
    // Below the target ladder the objective falls as θ rises.
    let h = 1e-6;
    assert!(at(&mut st, 0.015 + h, b, &strikes) - at(&mut st, 0.015 - h, b, &strikes) < 0.0);
    let mut rev = b.clone();
    rev.quotes.reverse();
    let rks: Vec<f64> = strikes.iter().rev().copied().collect();
    let (x, y) = (at(&mut st, 0.016, b, &strikes), at(&mut st, 0.016, &rev, &rks));
    assert!((x - y).abs() <= 1e-12 * x);
    // Checkpoint at T_0 only.
    st.commit(1).unwrap();
    let c = IntervalParams::of(&truth, 0);
    assert!(objective_eval(&mut st, &m, &truth, 0, &c, b, &strikes).is_err());
}

#[test]
fn failed_bucket_carries_previous_values() {
    let (m, truth) = (market(1.0), ladder());
    let q = synthetic(&m, &truth);
    let mut cfg = tight(guess_from(&truth, 0.03, 0.2));
    cfg.max_iterations = 2;
    let r = bootstrap_calibrate(&m, &q, &cfg, Model::Heston).unwrap();
    assert!(r.buckets.iter().all(|b| b.failed && b.diagnostic.is_some()));
    assert_eq!(r.buckets[0].fitted, IntervalParams::of(&cfg.initial_guess, 0));
    assert_eq!(r.buckets[3].fitted, r.buckets[0].fitted);
}

#[test]
fn advance_work_is_linear_in_buckets() {
    let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
    let theta: Vec<f64> = (0..10).map(|i| 0.01 + 0.001 * i as f64).collect();
    let truth = params(Model::Heston, &times, 3.0, &theta, 0.3, -0.3);
    let m = market(1.0);
    let q = synthetic(&m, &truth);
    let cfg = CalibConfig { vol_tolerance_bp: 1e-4, free: vec![Param::Theta], ..CalibConfig::new(guess_from(&truth, 0.012, 0.3)) };
    let r = bootstrap_calibrate(&m, &q, &cfg, Model::Heston).unwrap();
    let per_eval: Vec<f64> = r.buckets.iter().map(|b| b.advance_counts.iter().sum::<u64>() as f64 / b.evaluations as f64).collect();
    // Each evaluation advances a fixed set of keys over one interval, however deep the bucket.
    assert!(per_eval.iter().all(|&x| x == per_eval[0]), "{per_eval:?}");
    for (i, b) in r.buckets.iter().enumerate() {
        assert!(b.advance_counts.iter().enumerate().all(|(j, &n)| j == i || n == 0));
    }
}

#[test]
fn garch_buckets_keep_zero_correlation() {
    let truth = params(Model::Garch, &[0.0, 0.25, 0.5], 5.0, &[0.011, 0.009], 0.414, 0.0);
    let m = market(0.5);
    let q = synthetic(&m, &truth);
    let cfg = CalibConfig { vol_tolerance_bp: 1e-6, ..CalibConfig::new(guess_from(&truth, 0.02, 0.5)) };
    let r = bootstrap_calibrate(&m, &q, &cfg, Model::Garch).unwrap();
    assert!(r.fitted.rho.is_zero());
    assert!(r.per_bucket_residual_bp().iter().all(|&x| x <= 0.01), "{:?}", r.per_bucket_residual_bp());
    assert!(bootstrap_calibrate(&m, &q, &cfg, Model::Heston).is_err());
}
