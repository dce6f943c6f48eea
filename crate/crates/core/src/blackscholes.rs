//! Black-Scholes kernel in integrated variance.
//!
//! `Put_BS(x, y) = K e^{−∫r^d} N(−d_−) − x e^{−∫r^f} N(−d_+)` with
//! `d_± = (ln(x/K) + ∫(r^d − r^f)) / √y ± √y/2`.
//!
//! Partial derivatives in `(x, y)` are tabulated up to total order four.
//! Every entry is checked against finite differences in the test suite.

use crate::curve::{MarketState, OptionKind};
use crate::error::{Error, Result};
use crate::Scalar;

/// Below this integrated variance prices collapse to discounted intrinsic.
pub const MIN_VARIANCE: f64 = 1e-12;

pub fn norm_pdf<T: Scalar>(x: T) -> T {
    (-(x * x) / T::of(2.0)).exp() / (T::PI() + T::PI()).sqrt()
}

pub fn norm_cdf<T: Scalar>(x: T) -> T {
    T::of(0.5) * (-x / T::SQRT_2()).erfc()
}

/// Inverse normal CDF: rational starting point refined by Halley steps.
pub fn inv_norm_cdf<T: Scalar>(p: T) -> Result<T> {
    if !(p > T::zero() && p < T::one()) {
        return Err(Error::Domain(format!("probability {p} outside (0, 1)")));
    }
    let q = p.f64();
    // Acklam's coefficients.
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549671500000000e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let tail = |r: f64| {
        let s = (-2.0 * r.ln()).sqrt();
        (((((C[0] * s + C[1]) * s + C[2]) * s + C[3]) * s + C[4]) * s + C[5])
            / ((((D[0] * s + D[1]) * s + D[2]) * s + D[3]) * s + 1.0)
    };
    let x0 = if q < 0.02425 {
        tail(q)
    } else if q > 1.0 - 0.02425 {
        -tail(1.0 - q)
    } else {
        let r = q - 0.5;
        let s = r * r;
        (((((A[0] * s + A[1]) * s + A[2]) * s + A[3]) * s + A[4]) * s + A[5]) * r
            / (((((B[0] * s + B[1]) * s + B[2]) * s + B[3]) * s + B[4]) * s + 1.0)
    };
    let mut x = T::of(x0);
    for _ in 0..3 {
        let e = norm_cdf(x) - p;
        let u = e / norm_pdf(x);
        x -= u / (T::one() + x * u / T::of(2.0));
    }
    Ok(x)
}

/// Evaluation point of the kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BsPoint<T> {
    pub x: T,
    pub y: T,
    pub strike: T,
    pub rd_int: T,
    pub rf_int: T,
}

impl<T: Scalar> BsPoint<T> {
    pub fn new(x: T, y: T, strike: T, rd_int: T, rf_int: T) -> Self {
        Self { x, y, strike, rd_int, rf_int }
    }

    fn check(&self) -> Result<()> {
        if !(self.y > T::zero()) {
            return Err(Error::Domain(format!("integrated variance must be positive, got {}", self.y)));
        }
        if !(self.x > T::zero()) || !(self.strike > T::zero()) {
            return Err(Error::Domain(format!("spot {} and strike {} must be positive", self.x, self.strike)));
        }
        Ok(())
    }

    pub fn d_pm(&self) -> Result<(T, T)> {
        self.check()?;
        let s = self.y.sqrt();
        let m = ((self.x / self.strike).ln() + self.rd_int - self.rf_int) / s;
        let half = s / T::of(2.0);
        Ok((m + half, m - half))
    }

    pub fn put_bs(&self) -> Result<T> {
        let (dp, dm) = self.d_pm()?;
        Ok(self.strike * (-self.rd_int).exp() * norm_cdf(-dm) - self.x * (-self.rf_int).exp() * norm_cdf(-dp))
    }

    /// Call via parity, `Put + x e^{−∫r^f} − K e^{−∫r^d}`.
    pub fn call_bs(&self) -> Result<T> {
        Ok(self.put_bs()? + self.parity_offset())
    }

    pub fn parity_offset(&self) -> T {
        self.x * (-self.rf_int).exp() - self.strike * (-self.rd_int).exp()
    }

    pub fn price(&self, kind: OptionKind) -> Result<T> {
        match kind {
            OptionKind::Put => self.put_bs(),
            OptionKind::Call => self.call_bs(),
        }
    }

    /// Discounted intrinsic value, the `y → 0` limit.
    pub fn intrinsic(&self, kind: OptionKind) -> T {
        let fwd_leg = self.x * (-self.rf_int).exp();
        let k_leg = self.strike * (-self.rd_int).exp();
        match kind {
            OptionKind::Put => (k_leg - fwd_leg).max(T::zero()),
            OptionKind::Call => (fwd_leg - k_leg).max(T::zero()),
        }
    }

    /// Price, or discounted intrinsic value when `y ≤ MIN_VARIANCE`.
    pub fn price_or_intrinsic(&self, kind: OptionKind) -> Result<T> {
        if self.y <= T::of(MIN_VARIANCE) {
            Ok(self.intrinsic(kind))
        } else {
            self.price(kind)
        }
    }

    /// `∂^{ax+ay} Put_BS / ∂x^{ax} ∂y^{ay}` for `ax + ay ≤ 4`.
    pub fn partial(&self, ax: usize, ay: usize) -> Result<T> {
        if ax + ay > 4 {
            return Err(Error::UnsupportedDerivative(ax, ay));
        }
        if ax + ay == 0 {
            return self.put_bs();
        }
        let (u, m) = self.d_pm()?;
        let x = self.x;
        let y = self.y;
        let s = y.sqrt();
        let c = |v: f64| T::of(v);
        let dphi = (-self.rf_int).exp() * norm_pdf(u);
        let mu = m * u;
        let v = match (ax, ay) {
            (1, 0) => -(-self.rf_int).exp() * norm_cdf(-u),
            (0, 1) => x * dphi / (c(2.0) * s),
            (2, 0) => dphi / (x * s),
            (0, 2) => x * dphi / (c(4.0) * y * s) * (mu - T::one()),
            (1, 1) => -dphi * m / (c(2.0) * y),
            (3, 0) => -dphi / (x * x * y) * (u + s),
            (2, 1) => dphi * (mu - T::one()) / (c(2.0) * x * y * s),
            (1, 2) => -dphi / (c(2.0) * y * y) * (m * m * u / c(2.0) - u / c(2.0) - m),
            (0, 3) => {
                let q = m + u;
                x * dphi / (c(8.0) * y * y * s) * ((mu - T::one()).powi(2) - q * q + c(2.0))
            }
            (4, 0) => dphi / (x * x * x * y * s) * (u * u + c(3.0) * u * s + c(2.0) * y - T::one()),
            (3, 1) => dphi * u * (c(3.0) + y - u * u) / (c(2.0) * x * x * y * y),
            (2, 2) => {
                let q = m + u;
                -dphi / (c(2.0) * x * y * y * s)
                    * (q * q / c(2.0) + mu * (T::one() - mu / c(2.0)) - c(1.5))
            }
            (1, 3) => {
                // Polynomial in (d_+, √y) obtained by direct differentiation.
                let (u2, s2) = (u * u, s * s);
                let q = s2 * s * (u2 - T::one()) - c(3.0) * s2 * u * (u2 - c(3.0))
                    + c(3.0) * s * (u2 * u2 - c(6.0) * u2 + c(3.0))
                    - u * (u2 * u2 - c(10.0) * u2 + c(15.0));
                dphi * q / (c(8.0) * y * y * y)
            }
            (0, 4) => {
                let (u2, s2) = (u * u, s * s);
                let r = -s2 * s * u * (u2 - c(3.0)) + c(3.0) * s2 * (u2 * u2 - c(6.0) * u2 + c(3.0))
                    - c(3.0) * s * u * (u2 * u2 - c(10.0) * u2 + c(15.0))
                    + (u2 * u2 * u2 - c(15.0) * u2 * u2 + c(45.0) * u2 - c(15.0));
                x * dphi * r / (c(16.0) * y * y * y * s)
            }
            _ => return Err(Error::UnsupportedDerivative(ax, ay)),
        };
        Ok(v)
    }
}

/// Implied volatility of a price at maturity `t`.
///
/// Works on the out-of-the-money side (via parity) and runs Newton steps
/// inside a shrinking bisection bracket on `[1e−9, 5]`.
pub fn implied_vol<T: Scalar>(
    price: T,
    x: T,
    strike: T,
    rd_int: T,
    rf_int: T,
    t: T,
    kind: OptionKind,
) -> Result<T> {
    if !(t > T::zero()) {
        return Err(Error::Domain(format!("maturity must be positive, got {t}")));
    }
    let probe = BsPoint::new(x, T::one(), strike, rd_int, rf_int);
    probe.check()?;
    let fwd_leg = x * (-rf_int).exp();
    let k_leg = strike * (-rd_int).exp();
    let upper = match kind {
        OptionKind::Put => k_leg,
        OptionKind::Call => fwd_leg,
    };
    let lower = probe.intrinsic(kind);
    let scale = T::one().max(upper);
    let tol = T::of(64.0) * T::epsilon() * scale;
    if !price.is_finite() || price < lower - tol || price > upper + tol {
        return Err(Error::NoSolution(format!("price {price} outside [{lower}, {upper}]")));
    }
    if price <= lower + tol {
        return Ok(T::zero());
    }
    // Out-of-the-money side carries the time value without cancellation.
    let (otm_kind, target) = match (kind, k_leg > fwd_leg) {
        (OptionKind::Put, true) => (OptionKind::Call, price + probe.parity_offset()),
        (OptionKind::Call, false) => (OptionKind::Put, price - probe.parity_offset()),
        _ => (kind, price),
    };
    let value = |sigma: T| -> Result<T> {
        BsPoint::new(x, sigma * sigma * t, strike, rd_int, rf_int).price(otm_kind)
    };
    let sqrt_t = t.sqrt();
    let (mut lo, mut hi) = (T::of(1e-9), T::of(5.0));
    if value(hi)? < target {
        return Err(Error::NoSolution(format!("price {price} needs volatility above 5")));
    }
    // Start from the Brenner-Subrahmanyam estimate.
    let mut sigma = (target / fwd_leg * (T::of(2.0) * T::PI()).sqrt() / sqrt_t).max(T::of(1e-4)).min(T::one());
    for _ in 0..200 {
        let f = value(sigma)? - target;
        if f.abs() <= tol {
            return Ok(sigma);
        }
        if f > T::zero() {
            hi = sigma;
        } else {
            lo = sigma;
        }
        if hi - lo <= T::of(4.0) * T::epsilon() * hi {
            return Ok(sigma);
        }
        let (dp, _) = BsPoint::new(x, sigma * sigma * t, strike, rd_int, rf_int).d_pm()?;
        let vega = fwd_leg * norm_pdf(dp) * sqrt_t;
        let newton = sigma - f / vega;
        sigma = if vega > T::zero() && newton > lo && newton < hi {
            newton
        } else {
            (lo + hi) / T::of(2.0)
        };
    }
    Err(Error::Numeric(format!("implied volatility did not converge for price {price}")))
}

/// Strike whose Black-Scholes spot delta has magnitude `delta` for a put.
///
/// Solves `e^{−∫r^f} N(−d_+) = delta` for `K` at volatility `sigma`.
pub fn strike_from_put_delta<T: Scalar>(delta: T, sigma: T, market: &MarketState<T>, t: T) -> Result<T> {
    if !(delta > T::zero() && delta < T::one()) {
        return Err(Error::Domain(format!("delta {delta} outside (0, 1)")));
    }
    if !(sigma > T::zero()) {
        return Err(Error::Domain(format!("volatility must be positive, got {sigma}")));
    }
    let (rd_int, rf_int) = market.rate_integrals(t)?;
    let target = delta * rf_int.exp();
    if !(target < T::one()) {
        return Err(Error::NoSolution(format!("put delta {delta} unreachable with foreign discounting")));
    }
    let dp = -inv_norm_cdf(target)?;
    let s = sigma * t.sqrt();
    let k = market.spot * (rd_int - rf_int + s * s / T::of(2.0) - dp * s).exp();
    let check = BsPoint::new(market.spot, s * s, k, rd_int, rf_int).partial(1, 0)?;
    if !((check.abs() - delta).abs() <= T::of(1e3) * T::epsilon()) {
        return Err(Error::Numeric(format!("delta inversion residual {}", check.abs() - delta)));
    }
    Ok(k)
}

/// At-the-forward strike.
pub fn strike_atm<T: Scalar>(market: &MarketState<T>, t: T) -> Result<T> {
    market.forward(t)
}
