//! Bootstrap calibration of piecewise-constant model parameters.
//!
//! Quote bucket `i` sits at grid time `T_{i+1}` and is fitted by the
//! parameters of interval `i` alone. Every objective evaluation advances the
//! shared [`OperatorState`] over that one interval from the checkpoint at
//! `T_i`; once the bucket is done the state is committed at `T_{i+1}` and
//! never touched again. The per-interval advance counters in each
//! [`BucketReport`] make this visible.

mod quotes;
mod simplex;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use svexp_core::blackscholes::implied_vol;
use svexp_core::curve::{MarketState, Model, ModelParams, OptionKind, OptionSpec, PiecewiseCurve};
use svexp_core::operators::OperatorState;
use svexp_core::pricing::{assemble, garch_terms, heston_terms};
use svexp_core::schema::ParamsFile;

pub use quotes::{Bucket, Moneyness, Quote, QuoteSet};

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("calibration config: {0}")]
    Config(String),
    #[error("quotes: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] svexp_core::Error),
}

pub type Result<T> = std::result::Result<T, CalibError>;

/// Objective value reported when a candidate cannot be priced.
pub const PENALTY: f64 = 1e12;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Kappa,
    Theta,
    Lambda,
    Rho,
}

/// `[lower, upper]` for each parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub kappa: [f64; 2],
    pub theta: [f64; 2],
    pub lambda: [f64; 2],
    pub rho: [f64; 2],
}

impl Default for Bounds {
    fn default() -> Self {
        Self { kappa: [0.05, 20.0], theta: [1e-4, 0.5], lambda: [1e-3, 3.0], rho: [-0.99, 0.99] }
    }
}

impl Bounds {
    fn of(&self, p: Param) -> [f64; 2] {
        match p {
            Param::Kappa => self.kappa,
            Param::Theta => self.theta,
            Param::Lambda => self.lambda,
            Param::Rho => self.rho,
        }
    }

    /// Position of `v` in `[0, 1]`: logarithmic for the positive
    /// parameters, whose bounds span orders of magnitude.
    fn to_unit(&self, p: Param, v: f64) -> f64 {
        let [lo, hi] = self.of(p);
        match p {
            Param::Rho => (v - lo) / (hi - lo),
            _ => (v / lo).ln() / (hi / lo).ln(),
        }
    }

    fn from_unit(&self, p: Param, u: f64) -> f64 {
        let [lo, hi] = self.of(p);
        match p {
            Param::Rho => lo + u * (hi - lo),
            _ => lo * (hi / lo).powf(u),
        }
    }

    fn validate(&self) -> Result<()> {
        for (p, [lo, hi], min) in [
            (Param::Kappa, self.kappa, 0.0),
            (Param::Theta, self.theta, 0.0),
            (Param::Lambda, self.lambda, 0.0),
            (Param::Rho, self.rho, -1.0),
        ] {
            let ok = lo.is_finite() && hi.is_finite() && lo < hi && if p == Param::Rho { lo >= min && hi <= 1.0 } else { lo > min };
            if !ok {
                return Err(CalibError::Config(format!("infeasible {p:?} bounds [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Parameter values on one grid interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalParams {
    pub kappa: f64,
    pub theta: f64,
    pub lambda: f64,
    pub rho: f64,
}

impl IntervalParams {
    pub fn of(p: &ModelParams<f64>, i: usize) -> Self {
        Self { kappa: p.kappa.value(i), theta: p.theta.value(i), lambda: p.lambda.value(i), rho: p.rho.value(i) }
    }

    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::Kappa => self.kappa,
            Param::Theta => self.theta,
            Param::Lambda => self.lambda,
            Param::Rho => self.rho,
        }
    }

    pub fn set(&mut self, p: Param, v: f64) {
        match p {
            Param::Kappa => self.kappa = v,
            Param::Theta => self.theta = v,
            Param::Lambda => self.lambda = v,
            Param::Rho => self.rho = v,
        }
    }
}

/// `base` with interval `i` replaced by `v`.
pub fn with_interval(base: &ModelParams<f64>, i: usize, v: &IntervalParams) -> Result<ModelParams<f64>> {
    let put = |c: &PiecewiseCurve<f64>, x: f64| {
        let mut vals = c.values().to_vec();
        vals[i] = x;
        PiecewiseCurve::new(c.grid().clone(), vals)
    };
    Ok(ModelParams::new(
        base.model,
        put(&base.kappa, v.kappa)?,
        put(&base.theta, v.theta)?,
        put(&base.lambda, v.lambda)?,
        put(&base.rho, v.rho)?,
        base.v0,
    )?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibConfig {
    pub max_iterations: usize,
    /// Stop once the weighted RMS residual is at or below this.
    pub vol_tolerance_bp: f64,
    pub bounds: Bounds,
    /// Parameters fitted per bucket; the rest keep their initial values.
    pub free: Vec<Param>,
    /// Starting point of every bucket; its grid must match the quotes.
    pub initial_guess: ModelParams<f64>,
}

impl CalibConfig {
    /// Free `θ`, `λ`, `ρ` with `κ` held at its initial value.
    pub fn new(initial_guess: ModelParams<f64>) -> Self {
        Self {
            max_iterations: 400,
            vol_tolerance_bp: 1e-3,
            bounds: Bounds::default(),
            free: vec![Param::Theta, Param::Lambda, Param::Rho],
            initial_guess,
        }
    }

    fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !(self.vol_tolerance_bp >= 0.0) {
            return Err(CalibError::Config("vol tolerance must be nonnegative".into()));
        }
        let mut seen = Vec::new();
        for p in &self.free {
            if seen.contains(p) {
                return Err(CalibError::Config(format!("{p:?} listed twice as free")));
            }
            seen.push(*p);
        }
        if self.initial_guess.model == Model::Garch && self.initial_guess.rho.values().iter().any(|&r| r != 0.0) {
            return Err(CalibError::Config("GARCH calibration needs rho = 0 in the initial guess".into()));
        }
        Ok(())
    }

    /// Free parameters actually fitted: `ρ` stays at zero for GARCH.
    fn fitted(&self) -> Vec<Param> {
        let garch = self.initial_guess.model == Model::Garch;
        self.free.iter().copied().filter(|&p| !(garch && p == Param::Rho)).collect()
    }
}

fn default_iterations() -> usize {
    400
}

fn default_tolerance() -> f64 {
    1e-3
}

fn default_free() -> Vec<Param> {
    vec![Param::Theta, Param::Lambda, Param::Rho]
}

/// JSON form of a [`CalibConfig`]; `initial` also carries the market.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub vol_tolerance_bp: f64,
    #[serde(default)]
    pub bounds: Bounds,
    #[serde(default = "default_free")]
    pub free: Vec<Param>,
    pub initial: ParamsFile,
}

impl ConfigFile {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| CalibError::Config(format!("config JSON: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CalibError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn build(&self) -> Result<(MarketState<f64>, CalibConfig)> {
        let (market, guess) = self.initial.build()?;
        let cfg = CalibConfig {
            max_iterations: self.max_iterations,
            vol_tolerance_bp: self.vol_tolerance_bp,
            bounds: self.bounds,
            free: self.free.clone(),
            initial_guess: guess,
        };
        Ok((market, cfg))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub maturity: f64,
    pub fitted: IntervalParams,
    /// Model minus target implied vol per quote, in bp.
    pub residuals_bp: Vec<f64>,
    pub max_residual_bp: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Operator advances per grid interval while fitting this bucket.
    pub advance_counts: Vec<u64>,
    /// The optimiser failed; `fitted` repeats the previous interval.
    pub failed: bool,
    pub diagnostic: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibReport {
    pub fitted: ModelParams<f64>,
    pub buckets: Vec<BucketReport>,
}

impl CalibReport {
    pub fn per_bucket_residual_bp(&self) -> Vec<f64> {
        self.buckets.iter().map(|b| b.max_residual_bp).collect()
    }

    pub fn operator_advance_count(&self) -> Vec<Vec<u64>> {
        self.buckets.iter().map(|b| b.advance_counts.clone()).collect()
    }

    pub fn iterations(&self) -> Vec<usize> {
        self.buckets.iter().map(|b| b.iterations).collect()
    }

    /// Report with the fitted parameters in the core JSON schema.
    pub fn to_json(&self, market: &MarketState<f64>) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a> {
            fitted: ParamsFile,
            buckets: &'a [BucketReport],
        }
        let out = Out { fitted: ParamsFile::from_model(market, &self.fitted)?, buckets: &self.buckets };
        Ok(serde_json::to_string_pretty(&out).expect("plain data serializes"))
    }
}

/// One objective evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// `Σ weight·residual²` in bp², or [`PENALTY`].
    pub value: f64,
    pub residuals_bp: Vec<f64>,
    pub diagnostic: Option<String>,
}

/// Objective of bucket `i` at `candidate`, with the state checkpointed at
/// `T_i`. Only the scratch frontier over interval `i` is written.
pub fn objective_eval(
    state: &mut OperatorState<f64>,
    market: &MarketState<f64>,
    base: &ModelParams<f64>,
    i: usize,
    candidate: &IntervalParams,
    bucket: &Bucket,
    strikes: &[f64],
) -> Result<Evaluation> {
    if state.committed() != i {
        return Err(CalibError::Config(format!("bucket {i} needs the checkpoint at T_{i}, state is at T_{}", state.committed())));
    }
    let priced = with_interval(base, i, candidate).and_then(|p| bucket_residuals(state, market, &p, i, bucket, strikes));
    Ok(match priced {
        Ok(r) => {
            let value = r.iter().zip(&bucket.quotes).map(|(r, q)| q.weight * r * r).sum();
            Evaluation { value, residuals_bp: r, diagnostic: None }
        }
        Err(e) => Evaluation { value: PENALTY, residuals_bp: Vec::new(), diagnostic: Some(e.to_string()) },
    })
}

fn bucket_residuals(
    state: &mut OperatorState<f64>,
    market: &MarketState<f64>,
    params: &ModelParams<f64>,
    i: usize,
    bucket: &Bucket,
    strikes: &[f64],
) -> Result<Vec<f64>> {
    let terms = match params.model {
        Model::Heston => heston_terms(state, params, i + 1)?,
        Model::Garch => garch_terms(state, params, i + 1)?,
    };
    let t = bucket.maturity;
    let (rd, rf) = market.rate_integrals(t)?;
    bucket
        .quotes
        .iter()
        .zip(strikes)
        .map(|(q, &k)| {
            let put = assemble(market, &terms, &OptionSpec::put(k, t)?)?;
            let iv = implied_vol(put.price, market.spot, k, rd, rf, t, OptionKind::Put)?;
            Ok((iv - q.iv) * 1e4)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    next: usize,
    params: ParamsFile,
    state: String,
    buckets: Vec<BucketReport>,
}

/// A calibration session that can stop after any bucket and resume later.
#[derive(Clone, Debug)]
pub struct Calibrator {
    market: MarketState<f64>,
    quotes: QuoteSet,
    cfg: CalibConfig,
    strikes: Vec<Vec<f64>>,
    params: ModelParams<f64>,
    state: OperatorState<f64>,
    reports: Vec<BucketReport>,
}

impl Calibrator {
    pub fn new(market: MarketState<f64>, quotes: QuoteSet, cfg: CalibConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.initial_guess.grid().clone();
        quotes.check_grid(&grid)?;
        let strikes = quotes
            .buckets
            .iter()
            .map(|b| b.quotes.iter().map(|q| q.strike(&market, b.maturity)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params: cfg.initial_guess.clone(),
            state: OperatorState::new(grid),
            market,
            quotes,
            cfg,
            strikes,
            reports: Vec::new(),
        })
    }

    /// Index of the next bucket to fit.
    pub fn next_bucket(&self) -> usize {
        self.reports.len()
    }

    pub fn is_done(&self) -> bool {
        self.next_bucket() == self.quotes.buckets.len()
    }

    /// Current parameters: fitted up to the last bucket, initial guess after.
    pub fn params(&self) -> &ModelParams<f64> {
        &self.params
    }

    pub fn state(&self) -> &OperatorState<f64> {
        &self.state
    }

    pub fn reports(&self) -> &[BucketReport] {
        &self.reports
    }

    pub fn objective(&mut self, candidate: &IntervalParams) -> Result<Evaluation> {
        let i = self.next_bucket();
        let bucket = self.quotes.buckets.get(i).ok_or_else(|| CalibError::Config("all buckets fitted".into()))?;
        objective_eval(&mut self.state, &self.market, &self.params, i, candidate, bucket, &self.strikes[i])
    }

    /// Fit the next bucket and commit its interval.
    pub fn calibrate_next(&mut self) -> Result<&BucketReport> {
        let i = self.next_bucket();
        if self.is_done() {
            return Err(CalibError::Config("all buckets fitted".into()));
        }
        let free = self.cfg.fitted();
        let bounds = self.cfg.bounds;
        let guess = IntervalParams::of(&self.cfg.initial_guess, i);
        let before = self.state.advance_counts().to_vec();
        let denorm = |u: &[f64]| {
            let mut c = guess;
            for (p, &x) in free.iter().zip(u) {
                c.set(*p, bounds.from_unit(*p, x));
            }
            c
        };
        let x0: Vec<f64> = free.iter().map(|&p| bounds.to_unit(p, guess.get(p))).collect();
        let bucket = &self.quotes.buckets[i];
        let total_weight: f64 = bucket.quotes.iter().map(|q| q.weight).sum();
        let settings = simplex::Settings {
            max_iterations: self.cfg.max_iterations,
            target: self.cfg.vol_tolerance_bp.powi(2) * total_weight,
            step: 0.05,
            xtol: 1e-10,
        };
        let mut evaluations = 0;
        let mut error = None;
        let out = {
            let (state, market, params, strikes) = (&mut self.state, &self.market, &self.params, &self.strikes[i]);
            simplex::minimize(
                |u| {
                    evaluations += 1;
                    match objective_eval(state, market, params, i, &denorm(u), bucket, strikes) {
                        Ok(e) => e.value,
                        Err(e) => {
                            error = Some(e);
                            PENALTY
                        }
                    }
                },
                &x0,
                &settings,
            )
        };
        if let Some(e) = error {
            return Err(e);
        }
        let failed = !out.converged || out.f >= PENALTY;
        let chosen = match (failed, i) {
            (false, _) => denorm(&out.x),
            (true, 0) => guess,
            (true, _) => IntervalParams::of(&self.params, i - 1),
        };
        // Leaves the frontier at the chosen values before committing.
        let last = objective_eval(&mut self.state, &self.market, &self.params, i, &chosen, bucket, &self.strikes[i])?;
        evaluations += 1;
        self.params = with_interval(&self.params, i, &chosen)?;
        self.state.commit(i + 1)?;
        let advance_counts = self.state.advance_counts().iter().zip(&before).map(|(a, b)| a - b).collect();
        let max_residual_bp = last.residuals_bp.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let diagnostic = last.diagnostic.or_else(|| {
            failed.then(|| format!("optimiser stopped after {} iterations at objective {:.3e}", out.iterations, out.f))
        });
        self.reports.push(BucketReport {
            maturity: bucket.maturity,
            fitted: chosen,
            residuals_bp: last.residuals_bp,
            max_residual_bp,
            iterations: out.iterations,
            evaluations,
            advance_counts,
            failed,
            diagnostic,
        });
        Ok(self.reports.last().expect("just pushed"))
    }

    pub fn run(mut self) -> Result<CalibReport> {
        while !self.is_done() {
            self.calibrate_next()?;
        }
        Ok(self.report())
    }

    pub fn report(&self) -> CalibReport {
        CalibReport { fitted: self.params.clone(), buckets: self.reports.clone() }
    }

    /// Committed progress as JSON.
    pub fn checkpoint(&self) -> Result<String> {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            next: self.next_bucket(),
            params: ParamsFile::from_model(&self.market, &self.params)?,
            state: self.state.snapshot(),
            buckets: self.reports.clone(),
        };
        Ok(serde_json::to_string(&ck).expect("plain data serializes"))
    }

    /// Resume a session from [`checkpoint`](Self::checkpoint) output.
    pub fn restore(json: &str, market: MarketState<f64>, quotes: QuoteSet, cfg: CalibConfig) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(json).map_err(|e| CalibError::Config(format!("checkpoint JSON: {e}")))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(CalibError::Config(format!("unsupported checkpoint version {}", ck.version)));
        }
        let mut cal = Self::new(market, quotes, cfg)?;
        let (_, params) = ck.params.build()?;
        let state = OperatorState::restore(&ck.state)?;
        let consistent = params.grid() == cal.params.grid()
            && params.model == cal.params.model
            && state.grid() == params.grid()
            && state.committed() == ck.next
            && ck.buckets.len() == ck.next
            && ck.next <= cal.quotes.buckets.len();
        if !consistent {
            return Err(CalibError::Config("checkpoint does not match this calibration".into()));
        }
        cal.params = params;
        cal.state = state;
        cal.reports = ck.buckets;
        Ok(cal)
    }
}

/// Fit every bucket in maturity order.
pub fn bootstrap_calibrate(market: &MarketState<f64>, quotes: &QuoteSet, cfg: &CalibConfig, model: Model) -> Result<CalibReport> {
    if cfg.initial_guess.model != model {
        return Err(CalibError::Config(format!("initial guess is {} but {model} was requested", cfg.initial_guess.model)));
    }
    Calibrator::new(market.clone(), quotes.clone(), cfg.clone())?.run()
}
