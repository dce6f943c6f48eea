//! The subcommands, writing CSV or JSON to any sink.

use std::io::Write;
use std::path::Path;

use svexp_calib::{bootstrap_calibrate, ConfigFile, QuoteSet};
use serde_json::json;
use svexp_core::blackscholes::implied_vol;
use svexp_core::curve::{MarketState, Model, ModelParams, OptionKind, OptionSpec};
use svexp_core::pricing::price2;
use svexp_core::schema::ParamsFile;
use svexp_mc::{direct_mc_put, mixing_mc_put};

use crate::sensitivity::{sensitivity, write_csv, McSettings, Sweep};
use crate::{fmt6, put_iv, resolve_strikes, safe_set, vega, CliError, Result, StrikeSpec};

/// Per-parameter overrides applied to every interval.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Overrides {
    pub kappa: Option<f64>,
    pub theta: Option<f64>,
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
    pub v0: Option<f64>,
}

/// Parameters from `--params`, or the safe set for the row of `t`, with
/// overrides applied.
pub fn load_model(
    model: Option<Model>,
    params: Option<&Path>,
    t: f64,
    o: &Overrides,
) -> Result<(MarketState<f64>, ModelParams<f64>)> {
    let mut file = match params {
        Some(path) => {
            let f = ParamsFile::load(path)?;
            if let Some(want) = model {
                if want != f.model {
                    return Err(CliError::Input(format!("--model {want} but {} holds {} parameters", path.display(), f.model)));
                }
            }
            f
        }
        None => {
            let (m, p) = safe_set(model.unwrap_or(Model::Heston), t)?;
            ParamsFile::from_model(&m, &p)?
        }
    };
    for (v, dst) in [(o.kappa, &mut file.kappa), (o.theta, &mut file.theta), (o.lambda, &mut file.lambda), (o.rho, &mut file.rho)] {
        if let Some(v) = v {
            dst.iter_mut().for_each(|x| *x = v);
        }
    }
    if let Some(v0) = o.v0 {
        file.v0 = v0;
    }
    Ok(file.build()?)
}

/// One option priced by the expansion, as JSON.
pub fn price(out: &mut impl Write, market: &MarketState<f64>, params: &ModelParams<f64>, t: f64, spec: StrikeSpec, kind: OptionKind) -> Result<()> {
    let s = resolve_strikes(market, params, t, &[spec])?[0];
    let r = price2(market, params, &OptionSpec::new(s.strike, t, kind)?)?;
    let (rd, rf) = market.rate_integrals(t)?;
    let iv = implied_vol(r.price, market.spot, s.strike, rd, rf, t, kind)?;
    let doc = json!({
        "model": params.model.to_string(),
        "kind": match kind { OptionKind::Put => "put", OptionKind::Call => "call" },
        "maturity": t,
        "strike_label": s.spec.to_string(),
        "strike": s.strike,
        "delta_vol": s.delta_vol,
        "price": r.price,
        "implied_vol": iv,
        "xhat": r.xhat,
        "yhat": r.yhat,
        "term_xi2": r.term_xi2,
        "term_var_int": r.term_var_int,
        "term_mixed": r.term_mixed,
        "zeroth_order": r.zeroth_order,
        "d_xx": r.d_xx,
        "d_yy": r.d_yy,
        "d_xy": r.d_xy,
        "diagnostics": {
            "negative_xi2": r.diagnostics.negative_xi2,
            "below_intrinsic": r.diagnostics.below_intrinsic,
            "non_mean_reverting": r.diagnostics.non_mean_reverting,
        },
        "feller": params.restrict(t)?.feller(),
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("plain data serializes"))?;
    Ok(())
}

/// Implied vols on a maturity × strike grid.
pub fn surface(out: &mut impl Write, market: &MarketState<f64>, params: &ModelParams<f64>, maturities: &[f64], specs: &[StrikeSpec]) -> Result<()> {
    writeln!(out, "# d25/d10 strikes: put delta at the approximation's ATM implied vol (delta_vol)")?;
    writeln!(out, "maturity,strike_label,strike,delta_vol,iv")?;
    for &t in maturities {
        for s in resolve_strikes(market, params, t, specs)? {
            let r = price2(market, params, &OptionSpec::put(s.strike, t)?)?;
            let iv = put_iv(market, r.price, s.strike, t)?;
            writeln!(out, "{},{},{},{},{}", fmt6(t), s.spec, fmt6(s.strike), fmt6(s.delta_vol), fmt6(iv))?;
        }
    }
    Ok(())
}

/// Approximation against both Monte Carlo estimators at one set of strikes.
pub fn mc_validate(
    out: &mut impl Write,
    market: &MarketState<f64>,
    params: &ModelParams<f64>,
    t: f64,
    specs: &[StrikeSpec],
    mc: &McSettings,
) -> Result<()> {
    writeln!(
        out,
        "# paths={} steps_per_day={} seed={} antithetic={} control_variates={}",
        mc.paths,
        mc.steps_per_day.map_or("desk".into(), |s| s.to_string()),
        mc.seed,
        mc.antithetic,
        mc.control_variates
    )?;
    writeln!(out, "strike_label,strike,estimator,price,stderr,iv,error_bp,stderr_bp")?;
    let mut breaches = Vec::new();
    let cfg = mc.config(params.model, t);
    // The direct estimator has no control variates.
    let direct_cfg = svexp_mc::MCConfig { control_variates: false, ..cfg };
    for s in resolve_strikes(market, params, t, specs)? {
        let opt = OptionSpec::put(s.strike, t)?;
        let approx = price2(market, params, &opt)?.price;
        let approx_iv = put_iv(market, approx, s.strike, t)?;
        writeln!(out, "{},{},approx,{},0,{},0,0", s.spec, fmt6(s.strike), fmt6(approx), fmt6(approx_iv))?;
        let mixing = mixing_mc_put(market, params, &opt, &cfg)?;
        let direct = direct_mc_put(market, params, &opt, &direct_cfg)?;
        if (mixing.value - direct.value).abs() > 3.0 * mixing.stderr.hypot(direct.stderr) {
            breaches.push(s.spec.to_string());
        }
        for (name, est) in [("mixing", mixing), ("direct", direct)] {
            let iv = put_iv(market, est.value, s.strike, t)?;
            let se_bp = est.stderr / vega(market, s.strike, t, iv)? * 1e4;
            writeln!(
                out,
                "{},{},{name},{},{},{},{},{}",
                s.spec,
                fmt6(s.strike),
                fmt6(est.value),
                fmt6(est.stderr),
                fmt6(iv),
                fmt6((approx_iv - iv) * 1e4),
                fmt6(se_bp)
            )?;
        }
    }
    if !breaches.is_empty() {
        return Err(CliError::Numeric(format!("mixing and direct estimates differ by more than 3 SE at {}", breaches.join(", "))));
    }
    Ok(())
}

pub fn run_sensitivity(out: &mut impl Write, model: Model, sweep: &Sweep, maturities: &[f64], mc: &McSettings) -> Result<()> {
    let cells = sensitivity(model, sweep, maturities, mc)?;
    write_csv(out, model, mc, &cells)?;
    Ok(())
}

/// Writes the report JSON to `report` and the fitted parameters to
/// `fitted`. A bucket the optimiser could not fit is a numeric failure,
/// reported after both outputs are written.
pub fn calibrate(report: &mut impl Write, fitted: Option<&mut dyn Write>, quotes: &Path, config: &Path) -> Result<()> {
    let quotes = QuoteSet::load(quotes)?;
    let (market, cfg) = ConfigFile::load(config)?.build()?;
    let r = bootstrap_calibrate(&market, &quotes, &cfg, cfg.initial_guess.model)?;
    writeln!(report, "{}", r.to_json(&market)?)?;
    if let Some(f) = fitted {
        writeln!(f, "{}", ParamsFile::from_model(&market, &r.fitted)?.to_json())?;
    }
    let failed: Vec<String> = r.buckets.iter().filter(|b| b.failed).map(|b| fmt6(b.maturity)).collect();
    if !failed.is_empty() {
        return Err(CliError::Numeric(format!("buckets {} did not converge; previous values carried", failed.join(", "))));
    }
    Ok(())
}
