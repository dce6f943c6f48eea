//! Command implementations behind the `svexp` binary.

pub mod commands;
pub mod sensitivity;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use svexp_calib::CalibError;
use svexp_core::blackscholes::{implied_vol, strike_atm, strike_from_put_delta, BsPoint};
use svexp_core::curve::{MarketState, Model, ModelParams, OptionKind, OptionSpec};
use svexp_core::pricing::price2;
use svexp_mc::McError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Precondition(String),
    #[error("{0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<svexp_core::Error> for CliError {
    fn from(e: svexp_core::Error) -> Self {
        if e.is_precondition() {
            CliError::Precondition(e.to_string())
        } else if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::Core(e) => e.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<CalibError> for CliError {
    fn from(e: CalibError) -> Self {
        match e {
            CalibError::Core(e) => e.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

/// Spot, rates and variance parameters of the reference ("safe") set.
pub const SAFE_SPOT: f64 = 100.0;
pub const SAFE_RD: f64 = 0.02;
pub const SAFE_RF: f64 = 0.0;
pub const SAFE_V0: f64 = 0.0036;
pub const SAFE_KAPPA: f64 = 5.0;
pub const SAFE_LAMBDA: f64 = 0.414;
pub const SAFE_RHO: f64 = -0.391;

/// Long-run variance of the safe set for a maturity row: 0.019 up to one
/// month, 0.011 up to three months, 0.009 beyond. Each row is priced with
/// this value held constant over `[0, T]`.
pub fn safe_theta(t: f64) -> f64 {
    if t <= 1.0 / 12.0 + 1e-9 {
        0.019
    } else if t <= 0.25 + 1e-9 {
        0.011
    } else {
        0.009
    }
}

/// The safe set for maturity row `t`; GARCH uses `ρ = 0`.
pub fn safe_set(model: Model, t: f64) -> Result<(MarketState<f64>, ModelParams<f64>)> {
    let rho = match model {
        Model::Heston => SAFE_RHO,
        Model::Garch => 0.0,
    };
    let p = ModelParams::constant(model, t, SAFE_KAPPA, safe_theta(t), SAFE_LAMBDA, rho, SAFE_V0)?;
    Ok((MarketState::flat(SAFE_SPOT, SAFE_RD, SAFE_RF, t)?, p))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StrikeSpec {
    Value(f64),
    Atm,
    D25,
    D10,
}

impl FromStr for StrikeSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "atm" => Ok(Self::Atm),
            "d25" => Ok(Self::D25),
            "d10" => Ok(Self::D10),
            other => match other.parse::<f64>() {
                Ok(k) if k > 0.0 && k.is_finite() => Ok(Self::Value(k)),
                _ => Err(format!("strike must be a positive number, atm, d25 or d10; got {s}")),
            },
        }
    }
}

impl fmt::Display for StrikeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Value(k) => write!(f, "{}", fmt6(*k)),
            Self::Atm => f.write_str("atm"),
            Self::D25 => f.write_str("d25"),
            Self::D10 => f.write_str("d10"),
        }
    }
}

/// A resolved strike with the volatility used for any delta conversion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Strike {
    pub spec: StrikeSpec,
    pub strike: f64,
    /// Model ATM implied volatility; delta strikes are converted at it.
    pub delta_vol: f64,
}

/// ATM is the forward. Delta strikes use the approximation's ATM implied
/// volatility, since a quoted market vol is not available.
pub fn resolve_strikes(market: &MarketState<f64>, params: &ModelParams<f64>, t: f64, specs: &[StrikeSpec]) -> Result<Vec<Strike>> {
    let atm = strike_atm(market, t)?;
    let delta_vol = model_iv(market, params, atm, t)?;
    specs
        .iter()
        .map(|&spec| {
            let strike = match spec {
                StrikeSpec::Value(k) => k,
                StrikeSpec::Atm => atm,
                StrikeSpec::D25 => strike_from_put_delta(0.25, delta_vol, market, t)?,
                StrikeSpec::D10 => strike_from_put_delta(0.10, delta_vol, market, t)?,
            };
            Ok(Strike { spec, strike, delta_vol })
        })
        .collect()
}

/// Implied volatility of a put price.
pub fn put_iv(market: &MarketState<f64>, price: f64, strike: f64, t: f64) -> Result<f64> {
    let (rd, rf) = market.rate_integrals(t)?;
    Ok(implied_vol(price, market.spot, strike, rd, rf, t, OptionKind::Put)?)
}

/// Implied volatility of the second-order put price.
pub fn model_iv(market: &MarketState<f64>, params: &ModelParams<f64>, strike: f64, t: f64) -> Result<f64> {
    let p = price2(market, params, &OptionSpec::put(strike, t)?)?;
    put_iv(market, p.price, strike, t)
}

/// `∂Put/∂σ` at volatility `sigma`.
pub fn vega(market: &MarketState<f64>, strike: f64, t: f64, sigma: f64) -> Result<f64> {
    let (rd, rf) = market.rate_integrals(t)?;
    Ok(BsPoint::new(market.spot, sigma * sigma * t, strike, rd, rf).partial(0, 1)? * 2.0 * sigma * t)
}

/// Six significant digits, plain decimals where that stays readable.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { format!("{x}") };
    }
    let e = x.abs().log10().floor() as i32;
    if (-5..15).contains(&e) {
        format!("{:.*}", (5 - e).max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt6(0.0), "0");
        assert_eq!(fmt6(100.0), "100.000");
        assert_eq!(fmt6(-1.31234567), "-1.31235");
        assert_eq!(fmt6(0.000123456789), "0.000123457");
        assert_eq!(fmt6(123456789.0), "123456789");
        assert_eq!(fmt6(1.5e-9), "1.50000e-9");
    }

    #[test]
    fn strike_specs_parse() {
        assert_eq!("ATM".parse::<StrikeSpec>().unwrap(), StrikeSpec::Atm);
        assert_eq!("d10".parse::<StrikeSpec>().unwrap(), StrikeSpec::D10);
        assert_eq!("97.5".parse::<StrikeSpec>().unwrap(), StrikeSpec::Value(97.5));
        assert!("-3".parse::<StrikeSpec>().is_err());
        assert!("d50".parse::<StrikeSpec>().is_err());
    }

    #[test]
    fn safe_rows() {
        assert_eq!(safe_theta(1.0 / 12.0), 0.019);
        assert_eq!(safe_theta(0.25), 0.011);
        assert_eq!(safe_theta(0.5), 0.009);
        assert_eq!(safe_theta(1.0), 0.009);
        let (_, p) = safe_set(Model::Garch, 1.0).unwrap();
        assert!(p.rho.is_zero());
    }
}
