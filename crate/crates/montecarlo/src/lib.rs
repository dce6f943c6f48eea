//! Monte Carlo reference pricer for the Heston and GARCH diffusion models.
//!
//! Two estimators are provided. The direct one simulates log-spot and
//! variance jointly and averages discounted payoffs. The mixing estimator
//! simulates only the variance path and averages the conditional
//! Black-Scholes price `Put_BS(S0 ξ_T, ∫(1−ρ²)V dt)`, which removes the
//! spot's independent noise and is the low-variance oracle.
//!
//! Every path draws from its own ChaCha8 stream (`seed`, stream = path
//! index), so results do not depend on the number of worker threads.

mod control;
mod kernel;
mod path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use svexp_core::blackscholes::BsPoint;
use svexp_core::curve::{MarketState, ModelParams, OptionSpec, PiecewiseCurve};
use svexp_core::moments::{Family, VarianceLaw};
use svexp_core::OptionKind;

use kernel::{Kernel, Record, LANES};
pub use path::{Plan, Segment};

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid Monte Carlo configuration: {0}")]
    Config(String),
    #[error("scheme {scheme:?} cannot simulate {family:?} variance")]
    Scheme { scheme: Scheme, family: Family },
    #[error(transparent)]
    Core(#[from] svexp_core::Error),
}

pub type Result<T> = std::result::Result<T, McError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// Euler with drift and diffusion evaluated at `max(V, 0)`.
    FullTruncationEuler,
    /// Exact GBM factor with a trapezoid for the drift integral; IGa only.
    IgaExplicit,
}

impl Scheme {
    /// The default scheme for a variance family.
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Cir => Scheme::FullTruncationEuler,
            Family::Iga => Scheme::IgaExplicit,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MCConfig {
    pub paths: usize,
    pub steps_per_day: u32,
    pub seed: u64,
    pub scheme: Scheme,
    /// Pair each path with its sign-flipped mirror. Pairs count as two paths.
    pub antithetic: bool,
    /// Regress the mixing estimator on `ξ_T − 1` and the centred integrated
    /// variance, whose means are known exactly.
    pub control_variates: bool,
}

impl MCConfig {
    pub fn new(paths: usize, steps_per_day: u32, seed: u64, scheme: Scheme) -> Self {
        Self { paths, steps_per_day, seed, scheme, antithetic: false, control_variates: false }
    }

    /// Desk defaults: 200,000 antithetic paths with control variates and
    /// [`desk_steps_per_day`] for `t`.
    pub fn desk(family: Family, t: f64, seed: u64) -> Self {
        let mut cfg = Self::new(200_000, desk_steps_per_day(t), seed, Scheme::for_family(family));
        cfg.antithetic = true;
        cfg.control_variates = true;
        cfg
    }

    fn validate(&self, family: Family) -> Result<()> {
        if self.paths < 2 {
            return Err(McError::Config(format!("need at least 2 paths, got {}", self.paths)));
        }
        if self.antithetic && self.paths % 2 != 0 {
            return Err(McError::Config("antithetic runs need an even path count".into()));
        }
        if self.steps_per_day == 0 {
            return Err(McError::Config("steps per day must be at least 1".into()));
        }
        if family == Family::Cir && self.scheme == Scheme::IgaExplicit {
            return Err(McError::Scheme { scheme: self.scheme, family });
        }
        Ok(())
    }

    /// Independent samples, after pairing.
    fn samples(&self) -> usize {
        if self.antithetic {
            self.paths / 2
        } else {
            self.paths
        }
    }
}

/// 24 steps per day up to three months, 8 beyond.
pub fn desk_steps_per_day(t: f64) -> u32 {
    if t <= 0.25 + 1e-12 {
        24
    } else {
        8
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MCEstimate {
    pub value: f64,
    pub stderr: f64,
    pub paths: usize,
    /// CIR steps that went negative before truncation.
    pub truncations: u64,
}

impl MCEstimate {
    /// Mean and standard error of `values` in a fixed summation order.
    pub fn from_samples(values: &[f64], paths: usize, truncations: u64) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let var = if values.len() > 1 { ss / (n - 1.0) } else { 0.0 };
        Self { value: mean, stderr: (var / n).sqrt(), paths, truncations }
    }

    /// Whether `x` lies within `k` standard errors.
    pub fn covers(&self, x: f64, k: f64) -> bool {
        (x - self.value).abs() <= k * self.stderr
    }
}

/// Per-path state at one snapshot time.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PathSnapshot {
    pub v: f64,
    /// `∫ V dt`, trapezoid.
    pub int_v: f64,
    /// `∫ (1−ρ²) V dt`, trapezoid.
    pub int_wv: f64,
    /// `∫ ρ √V dB`, left point.
    pub stoch: f64,
    /// `∫ ρ² V dt`, trapezoid.
    pub int_rho2_v: f64,
}

impl PathSnapshot {
    /// The stochastic exponential `ξ`.
    pub fn xi(&self) -> f64 {
        (self.stoch - 0.5 * self.int_rho2_v).exp()
    }
}

/// Simulated variance paths, `snapshots[j][path]` at `times[j]`.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<PathSnapshot>>,
    pub truncations: u64,
    pub antithetic: bool,
}

impl Ensemble {
    pub fn paths(&self) -> usize {
        self.snapshots.first().map_or(0, Vec::len)
    }

    fn column(&self, t: f64) -> Result<&[PathSnapshot]> {
        let j = self
            .times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * t.max(1.0))
            .ok_or_else(|| McError::Config(format!("no snapshot at t = {t}")))?;
        Ok(&self.snapshots[j])
    }

    /// Average of `f` over paths at time `t`, pairing mirrors if antithetic.
    pub fn estimate(&self, t: f64, f: impl Fn(&PathSnapshot) -> f64 + Sync) -> Result<MCEstimate> {
        let col = self.column(t)?;
        let vals = self.paired(col, &f);
        Ok(MCEstimate::from_samples(&vals, col.len(), self.truncations))
    }

    /// Like [`estimate`](Self::estimate), with each `(g, mean)` in `controls`
    /// used as a control variate of known mean.
    pub fn estimate_controlled(
        &self,
        t: f64,
        f: impl Fn(&PathSnapshot) -> f64 + Sync,
        controls: &[(&(dyn Fn(&PathSnapshot) -> f64 + Sync), f64)],
    ) -> Result<MCEstimate> {
        let col = self.column(t)?;
        let vals = self.paired(col, &f);
        let zs: Vec<Vec<f64>> = controls
            .iter()
            .map(|(g, mean)| self.paired(col, g).into_iter().map(|x| x - mean).collect())
            .collect();
        Ok(control::regress(&vals, &zs, col.len(), self.truncations))
    }

    fn paired(&self, col: &[PathSnapshot], f: &(impl Fn(&PathSnapshot) -> f64 + Sync + ?Sized)) -> Vec<f64> {
        if self.antithetic {
            col.par_chunks(2).map(|p| 0.5 * (f(&p[0]) + f(&p[1]))).collect()
        } else {
            col.par_iter().map(f).collect()
        }
    }
}

const BLOCK: usize = 1024;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Run the kernel over all paths in a fixed order, in parallel blocks.
/// Path `2s` and `2s + 1` of an antithetic run share stream `s`.
fn run_paths(cfg: &MCConfig, kernel: &Kernel<'_>) -> (Vec<Vec<Record>>, u64) {
    let streams: Vec<u64> = (0..cfg.samples() as u64).collect();
    let width = if cfg.antithetic { 2 } else { 1 };
    let blocks: Vec<(Vec<Vec<Record>>, u64)> = streams
        .par_chunks(BLOCK / width)
        .map(|block| {
            let mut rows = Vec::with_capacity(block.len() * width);
            let mut trunc = 0;
            for group in block.chunks(LANES / width) {
                let mut rngs: Vec<ChaCha8Rng> = group.iter().map(|&s| stream_rng(cfg.seed, s)).collect();
                let (r, t) = kernel.run(&mut rngs, cfg.antithetic);
                rows.extend(r);
                trunc += t;
            }
            (rows, trunc)
        })
        .collect();
    let truncations = blocks.iter().map(|b| b.1).sum();
    (blocks.into_iter().flat_map(|b| b.0).collect(), truncations)
}

/// Simulate the variance law with correlation curve `rho`, recording the
/// path accumulators at each of `times` (increasing, within the horizon).
pub fn simulate_variance(law: &VarianceLaw<f64>, rho: &PiecewiseCurve<f64>, cfg: &MCConfig, times: &[f64]) -> Result<Ensemble> {
    cfg.validate(law.family)?;
    let plan = Plan::new(law, rho, times, &[], cfg.steps_per_day)?;
    let kernel = Kernel {
        plan: &plan,
        v0: law.v0,
        cir: law.family == Family::Cir,
        iga_exact: cfg.scheme == Scheme::IgaExplicit,
        carries: None,
    };
    let (rows, truncations) = run_paths(cfg, &kernel);
    let mut snapshots = vec![Vec::with_capacity(rows.len()); times.len()];
    for row in rows {
        for (j, r) in row.into_iter().enumerate() {
            snapshots[j].push(r.snap);
        }
    }
    Ok(Ensemble { times: times.to_vec(), snapshots, truncations, antithetic: cfg.antithetic })
}

fn maturities(opts: &[OptionSpec<f64>]) -> Vec<f64> {
    let mut ts: Vec<f64> = opts.iter().map(|o| o.maturity).collect();
    ts.sort_by(|a, b| a.partial_cmp(b).expect("finite maturities"));
    ts.dedup();
    ts
}

/// Mixing-formula prices of several options on one shared set of paths.
pub fn mixing_mc_prices(
    market: &MarketState<f64>,
    params: &ModelParams<f64>,
    opts: &[OptionSpec<f64>],
    cfg: &MCConfig,
) -> Result<Vec<MCEstimate>> {
    let law = VarianceLaw::from_params(params);
    let ens = simulate_variance(&law, &params.rho, cfg, &maturities(opts))?;
    let xi = |s: &PathSnapshot| s.xi();
    let wv = |s: &PathSnapshot| s.int_wv;
    opts.iter()
        .map(|o| {
            let (rd, rf) = market.rate_integrals(o.maturity)?;
            let f = |s: &PathSnapshot| {
                BsPoint::new(market.spot * s.xi(), s.int_wv, o.strike, rd, rf)
                    .price_or_intrinsic(o.kind)
                    .unwrap_or(f64::NAN)
            };
            if cfg.control_variates {
                let mean_wv = control::weighted_mean_integral(&law, &params.rho, o.maturity)?;
                ens.estimate_controlled(o.maturity, f, &[(&xi, 1.0), (&wv, mean_wv)])
            } else {
                ens.estimate(o.maturity, f)
            }
        })
        .collect()
}

/// `E Put_BS(S0 ξ_T, ∫(1−ρ²)V dt)`; calls through `Call_BS` likewise.
pub fn mixing_mc_put(market: &MarketState<f64>, params: &ModelParams<f64>, opt: &OptionSpec<f64>, cfg: &MCConfig) -> Result<MCEstimate> {
    Ok(mixing_mc_prices(market, params, std::slice::from_ref(opt), cfg)?[0])
}

/// Discounted payoffs of several options from joint spot-variance paths.
pub fn direct_mc_prices(
    market: &MarketState<f64>,
    params: &ModelParams<f64>,
    opts: &[OptionSpec<f64>],
    cfg: &MCConfig,
) -> Result<Vec<MCEstimate>> {
    let law = VarianceLaw::from_params(params);
    cfg.validate(law.family)?;
    let times = maturities(opts);
    let breaks: Vec<f64> = market.rd.grid().times().iter().chain(market.rf.grid().times()).copied().collect();
    let plan = Plan::new(&law, &params.rho, &times, &breaks, cfg.steps_per_day)?;
    let rates = market.rd.zip(&market.rf, |a, b| a - b)?;
    let carries = plan.segments().iter().map(|s| rates.eval(s.start)).collect::<svexp_core::Result<Vec<f64>>>()?;
    let kernel = Kernel {
        plan: &plan,
        v0: law.v0,
        cir: law.family == Family::Cir,
        iga_exact: cfg.scheme == Scheme::IgaExplicit,
        carries: Some(&carries),
    };
    let (rows, truncations) = run_paths(cfg, &kernel);
    opts.iter()
        .map(|o| {
            let j = times.iter().position(|&s| s == o.maturity).expect("maturity recorded");
            let df = (-market.rd.integrate(0.0, o.maturity)?).exp();
            let payoff = |x: f64| {
                let s = market.spot * x.exp();
                df * match o.kind {
                    OptionKind::Put => (o.strike - s).max(0.0),
                    OptionKind::Call => (s - o.strike).max(0.0),
                }
            };
            let vals: Vec<f64> = if cfg.antithetic {
                rows.chunks(2).map(|p| 0.5 * (payoff(p[0][j].x) + payoff(p[1][j].x))).collect()
            } else {
                rows.iter().map(|r| payoff(r[j].x)).collect()
            };
            Ok(MCEstimate::from_samples(&vals, rows.len(), truncations))
        })
        .collect()
}

pub fn direct_mc_put(market: &MarketState<f64>, params: &ModelParams<f64>, opt: &OptionSpec<f64>, cfg: &MCConfig) -> Result<MCEstimate> {
    Ok(direct_mc_prices(market, params, std::slice::from_ref(opt), cfg)?[0])
}

/// Sample mean of `V_t^n`.
pub fn moment_estimate(law: &VarianceLaw<f64>, cfg: &MCConfig, t: f64, n: usize) -> Result<MCEstimate> {
    if n == 0 || n > svexp_core::moments::MAX_ORDER {
        return Err(McError::Config(format!("moment order {n} outside [1, 6]")));
    }
    let rho = PiecewiseCurve::constant(law.grid().clone(), 0.0);
    simulate_variance(law, &rho, cfg, &[t])?.estimate(t, |s| s.v.powi(n as i32))
}
