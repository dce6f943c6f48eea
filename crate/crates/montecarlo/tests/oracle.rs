use svexp_core::blackscholes::BsPoint;
use svexp_core::curve::{MarketState, MaturityGrid, Model, ModelParams, OptionSpec, PiecewiseCurve};
use svexp_core::moments::{Family, VarianceLaw};
use svexp_mc::{
    direct_mc_prices, direct_mc_put, mixing_mc_prices, mixing_mc_put, moment_estimate, simulate_variance, MCConfig, McError,
    Scheme,
};

const T1M: f64 = 1.0 / 12.0;

fn safe(model: Model, t: f64, lambda: f64, rho: f64) -> ModelParams<f64> {
    ModelParams::constant(model, t, 5.0, 0.019, lambda, rho, 0.0036).unwrap()
}

fn market(t: f64) -> MarketState<f64> {
    MarketState::flat(100.0, 0.02, 0.0, t).unwrap()
}

fn law(family: Family, t: f64) -> VarianceLaw<f64> {
    let g = MaturityGrid::single(t).unwrap();
    let c = |x| PiecewiseCurve::constant(g.clone(), x);
    VarianceLaw::new(family, 0.0036, c(5.0), c(0.019), c(0.414)).unwrap()
}

fn combined(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

#[test]
fn zero_vol_of_vol_without_correlation_is_black_scholes() {
    let (m, p) = (market(T1M), safe(Model::Heston, T1M, 0.0, 0.0));
    let opt = OptionSpec::put(100.0, T1M).unwrap();
    let est = mixing_mc_put(&m, &p, &opt, &MCConfig::new(64, 24, 1, Scheme::FullTruncationEuler)).unwrap();
    assert_eq!(est.stderr, 0.0);
    // The Euler mean path with trapezoid integration, stepped independently.
    let steps = (T1M * 365.0 * 24.0).ceil() as usize;
    let dt = T1M / steps as f64;
    let (mut v, mut y) = (0.0036, 0.0);
    for _ in 0..steps {
        let next = v + 5.0 * (0.019 - v) * dt;
        y += 0.5 * (v + next) * dt;
        v = next;
    }
    let bs = BsPoint::new(100.0, y, 100.0, 0.02 * T1M, 0.0).put_bs().unwrap();
    assert!((est.value - bs).abs() <= 1e-12 * bs, "{} vs {bs}", est.value);
    // And the continuous limit to O(Δt).
    let exact = 0.019 * T1M + (0.0036 - 0.019) * (-(5.0 * T1M)).exp_m1() / -5.0;
    assert!((y - exact).abs() <= 5.0 * dt * exact);
}

#[test]
fn zero_vol_of_vol_direct_converges_to_black_scholes() {
    let (m, p) = (market(T1M), safe(Model::Heston, T1M, 0.0, -0.5));
    let opt = OptionSpec::put(98.0, T1M).unwrap();
    let est = direct_mc_put(&m, &p, &opt, &MCConfig::new(40_000, 24, 3, Scheme::FullTruncationEuler)).unwrap();
    let y = 0.019 * T1M + (0.0036 - 0.019) * (-(5.0 * T1M)).exp_m1() / -5.0;
    let bs = BsPoint::new(100.0, y, 98.0, 0.02 * T1M, 0.0).put_bs().unwrap();
    assert!(est.covers(bs, 3.0), "{est:?} vs {bs}");
}

#[test]
fn uncorrelated_paths_have_unit_xi() {
    let l = law(Family::Cir, T1M);
    let rho = PiecewiseCurve::constant(l.grid().clone(), 0.0);
    let ens = simulate_variance(&l, &rho, &MCConfig::new(200, 24, 5, Scheme::FullTruncationEuler), &[T1M]).unwrap();
    assert!(ens.snapshots[0].iter().all(|s| s.xi() == 1.0 && s.int_wv == s.int_v));
}

#[test]
fn cir_mean_matches_closed_form() {
    let l = law(Family::Cir, 0.25);
    let est = moment_estimate(&l, &MCConfig::new(20_000, 8, 11, Scheme::FullTruncationEuler), 0.25, 1).unwrap();
    assert!(est.covers(l.mean(0.25).unwrap(), 3.0), "{est:?}");
}

#[test]
fn iga_second_moment_matches_closed_form() {
    let l = law(Family::Iga, 0.5);
    let est = moment_estimate(&l, &MCConfig::new(20_000, 8, 13, Scheme::IgaExplicit), 0.5, 2).unwrap();
    assert!(est.covers(l.moment_n(0.5, 2).unwrap(), 3.0), "{est:?}");
}

#[test]
fn mixing_agrees_with_direct_and_is_tighter() {
    let (m, p) = (market(T1M), safe(Model::Heston, T1M, 0.414, -0.391));
    let opt = OptionSpec::put(100.0, T1M).unwrap();
    let cfg = MCConfig::new(40_000, 24, 17, Scheme::FullTruncationEuler);
    let mix = mixing_mc_put(&m, &p, &opt, &cfg).unwrap();
    let dir = direct_mc_put(&m, &p, &opt, &cfg).unwrap();
    assert!((mix.value - dir.value).abs() <= 3.0 * combined(mix.stderr, dir.stderr), "{mix:?} {dir:?}");
    assert!(mix.stderr < dir.stderr);
}

#[test]
fn direct_estimates_obey_parity() {
    let (m, p) = (market(T1M), safe(Model::Heston, T1M, 0.414, -0.391));
    let opts = [OptionSpec::put(101.0, T1M).unwrap(), OptionSpec::call(101.0, T1M).unwrap()];
    let est = direct_mc_prices(&m, &p, &opts, &MCConfig::new(20_000, 24, 19, Scheme::FullTruncationEuler)).unwrap();
    let fwd = 100.0 - 101.0 * (-0.02 * T1M).exp();
    let resid = est[1].value - est[0].value - fwd;
    assert!(resid.abs() <= 3.0 * combined(est[0].stderr, est[1].stderr), "{resid}");
}

#[test]
fn variance_reduction_shrinks_stderr() {
    let (m, p) = (market(T1M), safe(Model::Heston, T1M, 0.414, -0.391));
    let opt = [OptionSpec::put(100.0, T1M).unwrap()];
    let mut cfg = MCConfig::new(20_000, 24, 23, Scheme::FullTruncationEuler);
    let plain = mixing_mc_prices(&m, &p, &opt, &cfg).unwrap()[0];
    cfg.antithetic = true;
    let anti = mixing_mc_prices(&m, &p, &opt, &cfg).unwrap()[0];
    cfg.control_variates = true;
    let both = mixing_mc_prices(&m, &p, &opt, &cfg).unwrap()[0];
    assert!(anti.stderr < plain.stderr && both.stderr < anti.stderr);
    assert!((both.value - plain.value).abs() <= 3.0 * plain.stderr);
}

#[test]
fn results_are_bitwise_reproducible_across_thread_counts() {
    let (m, p) = (market(T1M), safe(Model::Garch, T1M, 0.414, 0.0));
    let opts = [OptionSpec::put(99.0, T1M).unwrap(), OptionSpec::put(100.0, T1M).unwrap()];
    let mut cfg = MCConfig::new(5_000, 24, 29, Scheme::IgaExplicit);
    cfg.antithetic = true;
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mixing_mc_prices(&m, &p, &opts, &cfg).unwrap())
    };
    let a = run(1);
    assert_eq!(a, run(3));
    assert_eq!(a, run(1));
}

#[test]
fn scheme_must_suit_family() {
    let (m, p) = (market(T1M), safe(Model::Heston, T1M, 0.414, -0.391));
    let opt = OptionSpec::put(100.0, T1M).unwrap();
    let err = mixing_mc_put(&m, &p, &opt, &MCConfig::new(100, 24, 1, Scheme::IgaExplicit)).unwrap_err();
    assert!(matches!(err, McError::Scheme { .. }));
    let mut odd = MCConfig::new(101, 24, 1, Scheme::FullTruncationEuler);
    odd.antithetic = true;
    assert!(mixing_mc_put(&m, &p, &opt, &odd).is_err());
    // Truncated Euler stays available for IGa.
    let g = safe(Model::Garch, T1M, 0.414, 0.0);
    assert!(mixing_mc_put(&m, &g, &opt, &MCConfig::new(100, 24, 1, Scheme::FullTruncationEuler)).is_ok());
}

#[test]
fn truncations_are_counted_without_nans() {
    let t = 0.5;
    let p = ModelParams::constant(Model::Heston, t, 1.0, 0.01, 1.0, -0.7, 0.0036).unwrap();
    let opt = OptionSpec::put(100.0, t).unwrap();
    let est = mixing_mc_put(&market(t), &p, &opt, &MCConfig::new(2_000, 8, 31, Scheme::FullTruncationEuler)).unwrap();
    assert!(est.truncations > 0);
    assert!(est.value.is_finite() && est.stderr.is_finite());
}
