//! Second-order expansion pricing of European options under stochastic
//! volatility with piecewise-constant parameters.
//!
//! The variance process is either the Heston (CIR) diffusion
//! `dV = κ(θ − V)dt + λ√V dB` or the GARCH diffusion (inverse-gamma)
//! `dV = κ(θ − V)dt + λV dB`, and the spot follows
//! `dS = S((r_d − r_f)dt + √V dW)` with `d⟨W, B⟩ = ρ dt`.
//!
//! Prices are obtained from a Taylor expansion of the mixing formula around
//! the Black-Scholes price at the expected integrated variance. All
//! expectations reduce to nested time integrals (`ω` operators) that are
//! evaluated exactly on the parameter grid with a recursion over grid
//! intervals.
//!
//! The analytic layer is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix it to `f64`.

pub mod blackscholes;
pub mod curve;
pub mod error;
pub mod moments;
pub mod ode;
pub mod operators;
pub mod pricing;
pub mod schema;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

pub use error::{Error, Result};

/// Floating-point scalar used throughout the analytic layer.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Complementary error function.
    fn erfc(self) -> Self;

    /// Lossless for `f64`, rounding for `f32`.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 constant")
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn erfc(self) -> Self {
        libm::erfc(self)
    }
}

impl Scalar for f32 {
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }
}

pub type Grid = curve::MaturityGrid<f64>;
pub type Curve = curve::PiecewiseCurve<f64>;
pub type Params = curve::ModelParams<f64>;
pub type Market = curve::MarketState<f64>;
pub type Contract = curve::OptionSpec<f64>;
pub type BsPoint = blackscholes::BsPoint<f64>;
pub type Key = operators::OperatorKey<f64>;
pub type OpState = operators::OperatorState<f64>;
pub type Law = moments::VarianceLaw<f64>;
pub type Terms = pricing::ExpansionTerms<f64>;
pub type Priced = pricing::PricingResult<f64>;

pub type Grid32 = curve::MaturityGrid<f32>;
pub type Curve32 = curve::PiecewiseCurve<f32>;
pub type Params32 = curve::ModelParams<f32>;
pub type Market32 = curve::MarketState<f32>;

pub use curve::{Model, OptionKind};
