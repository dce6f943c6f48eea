//! One-parameter sweeps around the safe set: approximation vs Monte Carlo
//! implied volatilities at the ATM, 25-delta and 10-delta put strikes.
//!
//! Maturity rows sharing identical parameters and step size are simulated
//! together, with one snapshot per maturity.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use svexp_core::curve::{MarketState, Model, ModelParams, OptionSpec};
use svexp_core::pricing::price2;
use svexp_mc::{desk_steps_per_day, mixing_mc_prices, MCConfig, Scheme};

use crate::{
    fmt6, put_iv, resolve_strikes, safe_theta, vega, CliError, Result, StrikeSpec, SAFE_KAPPA, SAFE_LAMBDA, SAFE_RD,
    SAFE_RF, SAFE_RHO, SAFE_SPOT, SAFE_V0,
};

/// The maturity rows of the tables: 1M, 3M, 6M, 1Y.
pub const MATURITIES: [f64; 4] = [1.0 / 12.0, 0.25, 0.5, 1.0];

pub const STRIKES: [StrikeSpec; 3] = [StrikeSpec::Atm, StrikeSpec::D25, StrikeSpec::D10];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Kappa,
    Theta,
    Lambda,
    Rho,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Kappa => "kappa",
            Self::Theta => "theta",
            Self::Lambda => "lambda",
            Self::Rho => "rho",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

impl FromStr for Sweep {
    type Err = String;

    /// `PARAM=v1,v2,...`
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (name, list) = s.split_once('=').ok_or_else(|| format!("sweep must look like PARAM=v1,v2,...; got {s}"))?;
        let param = match name.trim().to_ascii_lowercase().as_str() {
            "kappa" => SweepParam::Kappa,
            "theta" => SweepParam::Theta,
            "lambda" => SweepParam::Lambda,
            "rho" => SweepParam::Rho,
            other => return Err(format!("unknown sweep parameter {other}")),
        };
        let values = list
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("sweep value {v}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err("sweep needs at least one value".into());
        }
        Ok(Self { param, values })
    }
}

/// Monte Carlo settings; `steps_per_day = None` picks the desk value per row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McSettings {
    pub paths: usize,
    pub steps_per_day: Option<u32>,
    pub seed: u64,
    pub antithetic: bool,
    pub control_variates: bool,
}

impl McSettings {
    pub fn desk(seed: u64) -> Self {
        Self { paths: 200_000, steps_per_day: None, seed, antithetic: true, control_variates: true }
    }

    pub fn config(&self, model: Model, t: f64) -> MCConfig {
        let scheme = match model {
            Model::Heston => Scheme::FullTruncationEuler,
            Model::Garch => Scheme::IgaExplicit,
        };
        let mut cfg = MCConfig::new(self.paths, self.steps_per_day.unwrap_or_else(|| desk_steps_per_day(t)), self.seed, scheme);
        cfg.antithetic = self.antithetic;
        cfg.control_variates = self.control_variates;
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub param: SweepParam,
    pub value: f64,
    pub maturity: f64,
    pub spec: StrikeSpec,
    pub strike: f64,
    pub delta_vol: f64,
    pub approx_iv: f64,
    pub mc_iv: f64,
    /// `(approx − MC)` implied vol in bp.
    pub error_bp: f64,
    /// MC standard error mapped to implied vol through vega, in bp.
    pub stderr_bp: f64,
    /// Feller condition `2κθ > λ²` holds.
    pub feller: bool,
}

/// Parameters of one table row: the safe set at `t` with `param = value`.
pub fn row_params(model: Model, t: f64, param: SweepParam, value: f64, horizon: f64) -> Result<ModelParams<f64>> {
    let rho = match model {
        Model::Heston => SAFE_RHO,
        Model::Garch => 0.0,
    };
    let (mut k, mut th, mut l, mut r) = (SAFE_KAPPA, safe_theta(t), SAFE_LAMBDA, rho);
    match param {
        SweepParam::Kappa => k = value,
        SweepParam::Theta => th = value,
        SweepParam::Lambda => l = value,
        SweepParam::Rho => r = value,
    }
    Ok(ModelParams::constant(model, horizon, k, th, l, r, SAFE_V0)?)
}

/// Every cell of a sweep, in (value, maturity, strike) order.
pub fn sensitivity(model: Model, sweep: &Sweep, maturities: &[f64], mc: &McSettings) -> Result<Vec<Cell>> {
    if model == Model::Garch && sweep.param == SweepParam::Rho && sweep.values.iter().any(|&r| r != 0.0) {
        return Err(CliError::Precondition("GARCH pricing requires rho = 0".into()));
    }
    if maturities.iter().any(|&t| !(t > 0.0)) {
        return Err(CliError::Input("maturities must be positive".into()));
    }
    let mut cells = Vec::new();
    for &value in &sweep.values {
        // Rows with the same parameters and step size share one simulation.
        let mut groups: Vec<(ModelParams<f64>, u32, Vec<f64>)> = Vec::new();
        for &t in maturities {
            let p = row_params(model, t, sweep.param, value, 1.0)?;
            let spd = mc.config(model, t).steps_per_day;
            match groups.iter_mut().find(|g| g.0 == p && g.1 == spd) {
                Some(g) => g.2.push(t),
                None => groups.push((p, spd, vec![t])),
            }
        }
        let mut by_t: Vec<(f64, Vec<Cell>)> = Vec::new();
        for (_, spd, ts) in &groups {
            let horizon = ts.iter().copied().fold(0.0, f64::max);
            let params = row_params(model, ts[0], sweep.param, value, horizon)?;
            let market = MarketState::flat(SAFE_SPOT, SAFE_RD, SAFE_RF, horizon)?;
            let feller = params.feller().iter().all(|&f| f);
            let mut strikes = Vec::new();
            let mut opts = Vec::new();
            for &t in ts {
                for s in resolve_strikes(&market, &params, t, &STRIKES)? {
                    opts.push(OptionSpec::put(s.strike, t)?);
                    strikes.push(s);
                }
            }
            let cfg = MCConfig { steps_per_day: *spd, ..mc.config(model, ts[0]) };
            let est = mixing_mc_prices(&market, &params, &opts, &cfg)?;
            for ((o, s), e) in opts.iter().zip(&strikes).zip(&est) {
                let t = o.maturity;
                let approx = price2(&market, &params, o)?.price;
                let approx_iv = put_iv(&market, approx, o.strike, t)?;
                let mc_iv = put_iv(&market, e.value, o.strike, t)?;
                let cell = Cell {
                    param: sweep.param,
                    value,
                    maturity: t,
                    spec: s.spec,
                    strike: s.strike,
                    delta_vol: s.delta_vol,
                    approx_iv,
                    mc_iv,
                    error_bp: (approx_iv - mc_iv) * 1e4,
                    stderr_bp: e.stderr / vega(&market, o.strike, t, mc_iv)? * 1e4,
                    feller,
                };
                match by_t.iter_mut().find(|r| r.0 == t) {
                    Some(r) => r.1.push(cell),
                    None => by_t.push((t, vec![cell])),
                }
            }
        }
        for &t in maturities {
            if let Some(r) = by_t.iter().find(|r| r.0 == t) {
                cells.extend_from_slice(&r.1);
            }
        }
    }
    Ok(cells)
}

pub const HEADER: &str = "param,value,maturity,strike_label,strike,delta_vol,approx_iv,mc_iv,error_bp,stderr_bp,feller";

/// CSV with a comment header recording the run settings.
pub fn write_csv(out: &mut impl Write, model: Model, mc: &McSettings, cells: &[Cell]) -> std::io::Result<()> {
    let spd = mc.steps_per_day.map_or("desk".to_string(), |s| s.to_string());
    writeln!(
        out,
        "# model={model} paths={} steps_per_day={spd} seed={} antithetic={} control_variates={}",
        mc.paths, mc.seed, mc.antithetic, mc.control_variates
    )?;
    writeln!(out, "# d25/d10 strikes: put delta at delta_vol, the approximation's ATM implied vol")?;
    writeln!(out, "{HEADER}")?;
    for c in cells {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            c.param,
            fmt6(c.value),
            fmt6(c.maturity),
            c.spec,
            fmt6(c.strike),
            fmt6(c.delta_vol),
            fmt6(c.approx_iv),
            fmt6(c.mc_iv),
            fmt6(c.error_bp),
            fmt6(c.stderr_bp),
            c.feller
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parses() {
        let s: Sweep = "kappa=1,2, 3".parse().unwrap();
        assert_eq!(s, Sweep { param: SweepParam::Kappa, values: vec![1.0, 2.0, 3.0] });
        assert!("kappa".parse::<Sweep>().is_err());
        assert!("sigma=1".parse::<Sweep>().is_err());
        assert!("rho=0.1,x".parse::<Sweep>().is_err());
    }

    #[test]
    fn rows_share_simulations_only_when_identical() {
        let a = row_params(Model::Heston, 0.5, SweepParam::Kappa, 2.0, 1.0).unwrap();
        let b = row_params(Model::Heston, 1.0, SweepParam::Kappa, 2.0, 1.0).unwrap();
        let c = row_params(Model::Heston, 0.25, SweepParam::Kappa, 2.0, 1.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn garch_rejects_correlation_sweeps() {
        let s: Sweep = "rho=-0.5".parse().unwrap();
        let err = sensitivity(Model::Garch, &s, &[0.1], &McSettings::desk(1)).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
