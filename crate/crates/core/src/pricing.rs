//! Second-order expansion prices and Greeks.
//!
//! `Put⁽²⁾ = Put_BS(x̂, ŷ) + ½∂xx S0² E(ξ_T − 1)² + ½∂yy E(∫(1−ρ²)(V − EV))²
//!          + ∂xy S0 E{(ξ_T − 1)∫(1−ρ²)(V − EV)}`
//! with `x̂ = S0` and `ŷ = ∫(1−ρ²) EV`. Calls differ only in the zeroth-order
//! term. Every expectation is a short sum of `ω` operators.

use crate::blackscholes::{BsPoint, MIN_VARIANCE};
use crate::curve::{MarketState, Model, ModelParams, OptionKind, OptionSpec, PiecewiseCurve};
use crate::error::{Error, Result};
use crate::moments::{heston_shifted_law, VarianceLaw};
use crate::ode::{integrate_piecewise, Tolerance};
use crate::operators::{OperatorKey, OperatorState};
use crate::Scalar;

/// The expansion point's variance and the three expectations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpansionTerms<T> {
    pub yhat: T,
    /// `E(ξ_T − 1)²`, through the second-order exponential expansion.
    pub term_xi2: T,
    /// `E(∫(1−ρ²)(V − EV) dt)²`.
    pub term_var_int: T,
    /// `E{(ξ_T − 1) ∫(1−ρ²)(V − EV) dt}`.
    pub term_mixed: T,
}

/// Conditions worth reporting that do not invalidate a price.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// The exponential expansion produced `E(ξ_T − 1)² < 0`.
    pub negative_xi2: bool,
    /// Price below the discounted intrinsic value.
    pub below_intrinsic: bool,
    /// `κ − 2λρ ≤ 0` somewhere, so `V` is not mean-reverting under the shifted measure.
    pub non_mean_reverting: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PricingResult<T> {
    pub price: T,
    pub kind: OptionKind,
    pub xhat: T,
    pub yhat: T,
    pub term_xi2: T,
    pub term_var_int: T,
    pub term_mixed: T,
    pub zeroth_order: T,
    pub d_xx: T,
    pub d_yy: T,
    pub d_xy: T,
    pub diagnostics: Diagnostics,
}

impl<T: Scalar> PricingResult<T> {
    /// Recompute the price from its parts.
    pub fn reconstruct(&self) -> T {
        let half = T::of(0.5);
        self.zeroth_order
            + half * self.d_xx * self.xhat * self.xhat * self.term_xi2
            + half * self.d_yy * self.term_var_int
            + self.d_xy * self.xhat * self.term_mixed
    }

    pub fn terms(&self) -> ExpansionTerms<T> {
        ExpansionTerms {
            yhat: self.yhat,
            term_xi2: self.term_xi2,
            term_var_int: self.term_var_int,
            term_mixed: self.term_mixed,
        }
    }
}

struct Curves<T: Scalar> {
    kappa: PiecewiseCurve<T>,
    drift: PiecewiseCurve<T>,
    lam2: PiecewiseCurve<T>,
    rho2: PiecewiseCurve<T>,
    one_m_rho2: PiecewiseCurve<T>,
    /// `κ − nλρ` for `n = 1, 2`.
    shifted: [PiecewiseCurve<T>; 2],
}

impl<T: Scalar> Curves<T> {
    fn new(p: &ModelParams<T>) -> Self {
        let lr = p.lambda.zip(&p.rho, |l, r| l * r).expect("shared grid");
        let shift = |n: f64| p.kappa.zip(&lr, |k, x| k - T::of(n) * x).expect("shared grid");
        Self {
            kappa: p.kappa.clone(),
            drift: p.drift(),
            lam2: p.lambda.map(|l| l * l),
            rho2: p.rho.map(|r| r * r),
            one_m_rho2: p.rho.map(|r| T::one() - r * r),
            shifted: [shift(1.0), shift(2.0)],
        }
    }
}

fn neg<T: Scalar>(c: &PiecewiseCurve<T>) -> PiecewiseCurve<T> {
    c.map(|v| -v)
}

fn key<T: Scalar>(label: &str, pairs: &[(&PiecewiseCurve<T>, &PiecewiseCurve<T>)]) -> Result<OperatorKey<T>> {
    OperatorKey::new(label, pairs.iter().map(|(k, l)| ((*k).clone(), (*l).clone())).collect())
}

fn check_state<T: Scalar>(state: &OperatorState<T>, params: &ModelParams<T>, j: usize) -> Result<()> {
    if state.grid() != params.grid() {
        return Err(Error::InvalidGrid("operator state and parameters use different grids".into()));
    }
    if j == 0 || j > params.grid().len() {
        return Err(Error::Range(format!("grid index {j} outside [1, {}]", params.grid().len())));
    }
    Ok(())
}

/// Heston expansion terms at grid time `T_j`, reusing the cache in `state`.
pub fn heston_terms<T: Scalar>(state: &mut OperatorState<T>, params: &ModelParams<T>, j: usize) -> Result<ExpansionTerms<T>> {
    if params.model != Model::Heston {
        return Err(Error::ModelMismatch(format!("expected heston parameters, got {}", params.model)));
    }
    check_state(state, params, j)?;
    let c = Curves::new(params);
    let v0 = params.v0;
    let (kappa, mk) = (&c.kappa, neg(&c.kappa));
    let w = &c.one_m_rho2;
    let [k1, k2] = &c.shifted;
    let (mk1, mk2) = (neg(k1), neg(k2));

    let mut om = |label: &str, pairs: &[(&PiecewiseCurve<T>, &PiecewiseCurve<T>)]| -> Result<T> {
        state.omega_at(&key(label, pairs)?, j)
    };
    let y1 = om("heston.y1", &[(&mk, w)])?;
    let y2 = om("heston.y2", &[(&mk, w), (kappa, &c.drift)])?;
    let x1 = om("heston.x1", &[(&mk2, &c.rho2)])?;
    let x2 = om("heston.x2", &[(&mk2, &c.rho2), (k2, &c.drift)])?;
    let x3 = om("heston.x3", &[(&mk2, &c.rho2), (&mk2, &c.rho2), (k2, &c.lam2)])?;
    let x4 = om("heston.x4", &[(&mk2, &c.rho2), (&mk2, &c.rho2), (k2, &c.lam2), (k2, &c.drift)])?;
    let v3 = om("heston.v3", &[(&mk, w), (&mk, w), (kappa, &c.lam2)])?;
    let v4 = om("heston.v4", &[(&mk, w), (&mk, w), (kappa, &c.lam2), (kappa, &c.drift)])?;
    let m1 = om("heston.m1", &[(&mk1, w)])?;
    let m2 = om("heston.m2", &[(&mk1, w), (k1, &c.drift)])?;

    let two = T::of(2.0);
    Ok(ExpansionTerms {
        yhat: v0 * y1 + y2,
        term_xi2: (v0 * x1 + x2).exp() * (T::one() + v0 * x3 + x4) - T::one(),
        term_var_int: two * (v0 * v3 + v4),
        term_mixed: v0 * (m1 - y1) + (m2 - y2),
    })
}

fn require_zero_rho<T: Scalar>(params: &ModelParams<T>) -> Result<()> {
    if let Some(&r) = params.rho.values().iter().find(|r| !r.is_zero()) {
        return Err(Error::UnsupportedCorrelation(r.f64()));
    }
    Ok(())
}

/// GARCH (ρ ≡ 0) expansion terms at grid time `T_j`.
pub fn garch_terms<T: Scalar>(state: &mut OperatorState<T>, params: &ModelParams<T>, j: usize) -> Result<ExpansionTerms<T>> {
    if params.model != Model::Garch {
        return Err(Error::ModelMismatch(format!("expected garch parameters, got {}", params.model)));
    }
    require_zero_rho(params)?;
    check_state(state, params, j)?;
    let c = Curves::new(params);
    let v0 = params.v0;
    let (kappa, mk) = (&c.kappa, neg(&c.kappa));
    let one = PiecewiseCurve::constant(params.grid().clone(), T::one());
    let k_minus_l2 = c.kappa.zip(&c.lam2, |k, l| k - l)?;
    let l2 = &c.lam2;

    let mut om = |label: &str, pairs: &[(&PiecewiseCurve<T>, &PiecewiseCurve<T>)]| -> Result<T> {
        state.omega_at(&key(label, pairs)?, j)
    };
    let y1 = om("garch.y1", &[(&mk, &one)])?;
    let y2 = om("garch.y2", &[(&mk, &one), (kappa, &c.drift)])?;
    let g3 = om("garch.g3", &[(&mk, &one), (&mk, &one), (l2, l2)])?;
    let g4 = om("garch.g4", &[(&mk, &one), (&mk, &one), (l2, l2), (&k_minus_l2, &c.drift)])?;
    let g5 = om(
        "garch.g5",
        &[(&mk, &one), (&mk, &one), (l2, l2), (&k_minus_l2, &c.drift), (kappa, &c.drift)],
    )?;

    let two = T::of(2.0);
    let cov = v0 * v0 * g3 + two * v0 * g4 + two * g5;
    Ok(ExpansionTerms { yhat: v0 * y1 + y2, term_xi2: T::zero(), term_var_int: two * cov, term_mixed: T::zero() })
}

/// Expansion terms at maturity `t` on a fresh operator state.
pub fn expansion_terms<T: Scalar>(params: &ModelParams<T>, t: T) -> Result<ExpansionTerms<T>> {
    let p = params.restrict(t)?;
    let mut st = OperatorState::new(p.grid().clone());
    let j = p.grid().len();
    match p.model {
        Model::Heston => heston_terms(&mut st, &p, j),
        Model::Garch => garch_terms(&mut st, &p, j),
    }
}

/// Expansion terms from one direct ODE integration of means, variances
/// and the nested covariance integrals; independent of the operator
/// recursion and used to cross-check it.
pub fn expansion_terms_quadrature<T: Scalar>(params: &ModelParams<T>, t: T) -> Result<ExpansionTerms<T>> {
    if params.model == Model::Garch {
        require_zero_rho(params)?;
    }
    let p = params.restrict(t)?;
    let times = p.grid().times().to_vec();
    let c = Curves::new(&p);
    let iga = p.model == Model::Garch;
    // State: under P   [m, var, b, c, y]; under Q1 [m1]; under Q2 [m2, var2, b2, c2, e2].
    // b_t = ∫_0^t w_s Cov(V_s, V_t) ds obeys b' = w Var − κ b.
    let y0 = [p.v0, T::zero(), T::zero(), T::zero(), T::zero(), p.v0, p.v0, T::zero(), T::zero(), T::zero(), T::zero()];
    let y = integrate_piecewise(
        |i, _u, y: &[T], dy: &mut [T]| {
            let (k, d, l2) = (c.kappa.value(i), c.drift.value(i), c.lam2.value(i));
            let (w, r2) = (c.one_m_rho2.value(i), c.rho2.value(i));
            let (k1, k2) = (c.shifted[0].value(i), c.shifted[1].value(i));
            let two = T::of(2.0);
            let (m, var, b) = (y[0], y[1], y[2]);
            dy[0] = d - k * m;
            dy[1] = -two * k * var + if iga { l2 * (var + m * m) } else { l2 * m };
            dy[2] = w * var - k * b;
            dy[3] = two * w * b;
            dy[4] = w * m;
            dy[5] = d - k1 * y[5];
            let (m2, var2, b2) = (y[6], y[7], y[8]);
            dy[6] = d - k2 * m2;
            dy[7] = -two * k2 * var2 + l2 * m2;
            dy[8] = r2 * var2 - k2 * b2;
            dy[9] = r2 * b2;
            dy[10] = r2 * m2;
        },
        &times,
        &y0,
        Tolerance::default(),
    )?;
    let mut terms = ExpansionTerms { yhat: y[4], term_xi2: T::zero(), term_var_int: y[3], term_mixed: T::zero() };
    if !iga {
        // E_{Q1}∫wV − E∫wV, with the Q1 mean integrated alongside.
        let q1 = mixed_q1_integral(&p, &c)?;
        terms.term_mixed = q1 - y[4];
        terms.term_xi2 = y[10].exp() * (T::one() + y[9]) - T::one();
    }
    Ok(terms)
}

fn mixed_q1_integral<T: Scalar>(p: &ModelParams<T>, c: &Curves<T>) -> Result<T> {
    let times = p.grid().times().to_vec();
    let y = integrate_piecewise(
        |i, _u, y: &[T], dy: &mut [T]| {
            dy[0] = c.drift.value(i) - c.shifted[0].value(i) * y[0];
            dy[1] = c.one_m_rho2.value(i) * y[0];
        },
        &times,
        &[p.v0, T::zero()],
        Tolerance::default(),
    )?;
    Ok(y[1])
}

fn check_option<T: Scalar>(market: &MarketState<T>, params: &ModelParams<T>, opt: &OptionSpec<T>) -> Result<()> {
    let h = params.grid().horizon();
    if opt.maturity > h {
        return Err(Error::Range(format!("maturity {} beyond parameter horizon {h}", opt.maturity)));
    }
    let mh = market.rd.grid().horizon().min(market.rf.grid().horizon());
    if opt.maturity > mh {
        return Err(Error::Range(format!("maturity {} beyond rate curve horizon {mh}", opt.maturity)));
    }
    Ok(())
}

/// Combine precomputed terms into a price at `opt`.
pub fn assemble<T: Scalar>(
    market: &MarketState<T>,
    terms: &ExpansionTerms<T>,
    opt: &OptionSpec<T>,
) -> Result<PricingResult<T>> {
    let (rd_int, rf_int) = market.rate_integrals(opt.maturity)?;
    let x = market.spot;
    let pt = BsPoint::new(x, terms.yhat, opt.strike, rd_int, rf_int);
    let (zeroth, d_xx, d_yy, d_xy) = if terms.yhat <= T::of(MIN_VARIANCE) {
        (pt.intrinsic(opt.kind), T::zero(), T::zero(), T::zero())
    } else {
        (pt.price(opt.kind)?, pt.partial(2, 0)?, pt.partial(0, 2)?, pt.partial(1, 1)?)
    };
    let mut r = PricingResult {
        price: T::zero(),
        kind: opt.kind,
        xhat: x,
        yhat: terms.yhat,
        term_xi2: terms.term_xi2,
        term_var_int: terms.term_var_int,
        term_mixed: terms.term_mixed,
        zeroth_order: zeroth,
        d_xx,
        d_yy,
        d_xy,
        diagnostics: Diagnostics::default(),
    };
    r.price = r.reconstruct();
    r.diagnostics.negative_xi2 = terms.term_xi2 < T::zero();
    r.diagnostics.below_intrinsic = r.price < pt.intrinsic(opt.kind);
    Ok(r)
}

pub fn heston_put2<T: Scalar>(market: &MarketState<T>, params: &ModelParams<T>, opt: &OptionSpec<T>) -> Result<PricingResult<T>> {
    if params.model != Model::Heston {
        return Err(Error::ModelMismatch(format!("expected heston parameters, got {}", params.model)));
    }
    price2(market, params, opt)
}

pub fn garch_put2<T: Scalar>(market: &MarketState<T>, params: &ModelParams<T>, opt: &OptionSpec<T>) -> Result<PricingResult<T>> {
    if params.model != Model::Garch {
        return Err(Error::ModelMismatch(format!("expected garch parameters, got {}", params.model)));
    }
    price2(market, params, opt)
}

/// Call price; the expansion terms are those of the put.
pub fn price_call2<T: Scalar>(market: &MarketState<T>, params: &ModelParams<T>, opt: &OptionSpec<T>) -> Result<PricingResult<T>> {
    let call = OptionSpec { kind: OptionKind::Call, ..*opt };
    price2(market, params, &call)
}

/// Second-order price of `opt` under either model.
pub fn price2<T: Scalar>(market: &MarketState<T>, params: &ModelParams<T>, opt: &OptionSpec<T>) -> Result<PricingResult<T>> {
    if params.model == Model::Garch {
        require_zero_rho(params)?;
    }
    check_option(market, params, opt)?;
    let terms = expansion_terms(params, opt.maturity)?;
    let mut r = assemble(market, &terms, opt)?;
    if params.model == Model::Heston {
        let p = params.restrict(opt.maturity)?;
        r.diagnostics.non_mean_reverting = heston_shifted_law(&p, 2)?.non_mean_reverting();
    }
    Ok(r)
}

/// Second-order Delta and Gamma in `S0`.
pub fn greeks2<T: Scalar>(market: &MarketState<T>, params: &ModelParams<T>, opt: &OptionSpec<T>) -> Result<(T, T)> {
    if params.model == Model::Garch {
        require_zero_rho(params)?;
    }
    check_option(market, params, opt)?;
    let e = expansion_terms(params, opt.maturity)?;
    let (rd_int, rf_int) = market.rate_integrals(opt.maturity)?;
    let s0 = market.spot;
    let pt = BsPoint::new(s0, e.yhat, opt.strike, rd_int, rf_int);
    let d = |ax, ay| pt.partial(ax, ay);
    let half = T::of(0.5);
    let two = T::of(2.0);
    let delta = d(1, 0)?
        + half * (two * s0 * d(2, 0)? + s0 * s0 * d(3, 0)?) * e.term_xi2
        + half * d(1, 2)? * e.term_var_int
        + (d(1, 1)? + s0 * d(2, 1)?) * e.term_mixed;
    let gamma = d(2, 0)?
        + half * (two * d(2, 0)? + T::of(4.0) * s0 * d(3, 0)? + s0 * s0 * d(4, 0)?) * e.term_xi2
        + half * d(2, 2)? * e.term_var_int
        + (two * d(2, 1)? + s0 * d(3, 1)?) * e.term_mixed;
    let delta = match opt.kind {
        OptionKind::Put => delta,
        OptionKind::Call => delta + (-rf_int).exp(),
    };
    Ok((delta, gamma))
}

/// Computable error bound for GARCH with `ρ ≡ 0`:
/// `(1/6) M̂ T² ∫_0^T (E(V − EV)⁴)^{3/4} dt`, where `M̂` is the largest
/// `|∂yyy Put_BS(S0, y)|` on a log grid `y ∈ [ŷ·10⁻³, ŷ·10³]`.
pub fn garch_error_bound_rho0<T: Scalar>(market: &MarketState<T>, params: &ModelParams<T>, opt: &OptionSpec<T>) -> Result<T> {
    if params.model != Model::Garch {
        return Err(Error::ModelMismatch(format!("expected garch parameters, got {}", params.model)));
    }
    require_zero_rho(params)?;
    check_option(market, params, opt)?;
    let t = opt.maturity;
    let law = VarianceLaw::from_params(&params.restrict(t)?);
    let integral = law.lyapunov_integral(t)?;
    if integral == T::zero() {
        return Ok(T::zero());
    }
    let yhat = expansion_terms(params, t)?.yhat;
    let (rd_int, rf_int) = market.rate_integrals(t)?;
    const POINTS: usize = 2001;
    let mut sup = T::zero();
    for i in 0..POINTS {
        let e = T::of(-3.0 + 6.0 * i as f64 / (POINTS - 1) as f64);
        let y = yhat * T::of(10.0).powf(e);
        let v = BsPoint::new(market.spot, y, opt.strike, rd_int, rf_int).partial(0, 3)?.abs();
        sup = sup.max(v);
    }
    Ok(sup * t * t * integral / T::of(6.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::MaturityGrid;

    fn safe(model: Model, rho: f64) -> ModelParams<f64> {
        let g = MaturityGrid::new(vec![0.0, 1.0 / 12.0, 0.25, 0.5, 1.0]).unwrap();
        let c = |v: f64| PiecewiseCurve::constant(g.clone(), v);
        let theta = PiecewiseCurve::new(g.clone(), vec![0.019, 0.011, 0.009, 0.009]).unwrap();
        ModelParams::new(model, c(5.0), theta, c(0.414), c(rho), 0.0036).unwrap()
    }

    fn market() -> MarketState<f64> {
        MarketState::flat(100.0, 0.02, 0.0, 1.0).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1.0)
    }

    #[test]
    fn operator_terms_match_direct_integration() {
        for (model, rho) in [(Model::Heston, -0.391), (Model::Heston, 0.0), (Model::Heston, 0.6), (Model::Garch, 0.0)] {
            let p = safe(model, rho);
            for &t in &[1.0 / 12.0, 0.3, 1.0] {
                let a = expansion_terms(&p, t).unwrap();
                let b = expansion_terms_quadrature(&p, t).unwrap();
                for (x, y) in [
                    (a.yhat, b.yhat),
                    (a.term_xi2, b.term_xi2),
                    (a.term_var_int, b.term_var_int),
                    (a.term_mixed, b.term_mixed),
                ] {
                    let r = (x - y).abs() / y.abs().max(1e-300);
                    assert!(r < 1e-9 || (x - y).abs() < 1e-15, "{model} rho={rho} t={t}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn reconstruction_and_parity() {
        let p = safe(Model::Heston, -0.391);
        let m = market();
        let put = heston_put2(&m, &p, &OptionSpec::put(101.0, 0.4).unwrap()).unwrap();
        assert!((put.reconstruct() - put.price).abs() <= 1e-12);
        let call = price_call2(&m, &p, &OptionSpec::put(101.0, 0.4).unwrap()).unwrap();
        assert_eq!(call.terms(), put.terms());
        let (a, b) = m.rate_integrals(0.4).unwrap();
        let parity = call.price - put.price - (100.0 * (-b).exp() - 101.0 * (-a).exp());
        assert!(parity.abs() < 1e-12, "{parity}");
    }

    #[test]
    fn degenerate_cases() {
        let mut p = safe(Model::Heston, 0.0);
        let r = heston_put2(&market(), &p, &OptionSpec::put(100.0, 0.5).unwrap()).unwrap();
        assert_eq!(r.term_xi2, 0.0);
        assert_eq!(r.term_mixed, 0.0);
        p.lambda = p.lambda.map(|_| 0.0);
        p.rho = p.rho.map(|_| -0.5);
        let r = heston_put2(&market(), &p, &OptionSpec::put(100.0, 0.5).unwrap()).unwrap();
        assert_eq!(r.term_var_int, 0.0);
        assert_eq!(r.term_mixed, 0.0);
        // ξ_T = exp(∫ρ²V) − 1 is deterministic but not zero when λ ≡ 0, ρ ≠ 0.
        assert!(r.term_xi2 > 0.0);
    }

    #[test]
    fn garch_rejects_correlation() {
        let p = safe(Model::Garch, -0.3);
        let e = garch_put2(&market(), &p, &OptionSpec::put(100.0, 0.5).unwrap()).unwrap_err();
        assert!(matches!(e, Error::UnsupportedCorrelation(_)));
        let h = safe(Model::Heston, -0.3);
        assert!(garch_put2(&market(), &h, &OptionSpec::put(100.0, 0.5).unwrap()).is_err());
    }

    #[test]
    fn greeks_match_finite_differences() {
        for (model, rho) in [(Model::Heston, -0.391), (Model::Garch, 0.0)] {
            let p = safe(model, rho);
            let opt = OptionSpec::put(98.0, 0.25).unwrap();
            let at = |s: f64| {
                let m = MarketState::flat(s, 0.02, 0.0, 1.0).unwrap();
                price2(&m, &p, &opt).unwrap().price
            };
            let (delta, gamma) = greeks2(&market(), &p, &opt).unwrap();
            let h = 1e-3;
            let fd1 = (at(100.0 + h) - at(100.0 - h)) / (2.0 * h);
            let fd2 = (at(100.0 + h) - 2.0 * at(100.0) + at(100.0 - h)) / (h * h);
            assert!(rel(delta, fd1) < 1e-6, "{model} delta {delta} vs {fd1}");
            assert!((gamma - fd2).abs() / gamma.abs() < 1e-5, "{model} gamma {gamma} vs {fd2}");
        }
    }

    #[test]
    fn error_bound_examples() {
        let m = market();
        let opt = OptionSpec::put(100.0, 0.5).unwrap();
        let mut p = safe(Model::Garch, 0.0);
        let mut last = -1.0;
        for lam in [0.0, 0.2, 0.4, 0.8] {
            p.lambda = p.lambda.map(|_| lam);
            let b = garch_error_bound_rho0(&m, &p, &opt).unwrap();
            if lam == 0.0 {
                assert_eq!(b, 0.0);
            }
            assert!(b >= 0.0 && b > last);
            last = b;
        }
    }
}
