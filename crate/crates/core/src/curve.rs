//! Maturity grids, piecewise-constant curves, and the parameter/market
//! containers built on them.
//!
//! Intervals are right-open, `[T_i, T_{i+1})`, except that the horizon
//! itself belongs to the last interval.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Heston,
    Garch,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::Heston => f.write_str("heston"),
            Model::Garch => f.write_str("garch"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Put,
    Call,
}

/// Strictly increasing times starting at 0.
#[derive(Clone, Debug)]
pub struct MaturityGrid<T> {
    times: Arc<[T]>,
}

impl<T: Scalar> PartialEq for MaturityGrid<T> {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.times, &other.times) || self.times[..] == other.times[..]
    }
}

impl<T: Scalar> MaturityGrid<T> {
    pub fn new(times: Vec<T>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidGrid("need at least two times".into()));
        }
        if times[0] != T::zero() {
            return Err(Error::InvalidGrid(format!("first time must be 0, got {}", times[0])));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "times must be finite and strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { times: times.into() })
    }

    /// Single interval `[0, horizon]`.
    pub fn single(horizon: T) -> Result<Self> {
        Self::new(vec![T::zero(), horizon])
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn horizon(&self) -> T {
        self.times[self.times.len() - 1]
    }

    /// Number of intervals `N`.
    pub fn len(&self) -> usize {
        self.times.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self, i: usize) -> T {
        self.times[i + 1] - self.times[i]
    }

    /// Index `i` with `t ∈ [T_i, T_{i+1})`; the horizon maps to `N − 1`.
    pub fn interval_of(&self, t: T) -> Result<usize> {
        if !(t >= T::zero() && t <= self.horizon()) {
            return Err(Error::Range(format!("t = {} outside [0, {}]", t, self.horizon())));
        }
        let n = self.len();
        // First index with times[idx] > t, minus one.
        let idx = self.times.partition_point(|&s| s <= t);
        Ok((idx - 1).min(n - 1))
    }

    /// Index `j` with `times[j] == t`, if `t` is a grid time.
    pub fn position(&self, t: T) -> Option<usize> {
        self.times.iter().position(|&s| s == t)
    }

    /// Grid truncated at `t`, splitting the interval containing it.
    pub fn restrict(&self, t: T) -> Result<Self> {
        if !(t > T::zero()) || t > self.horizon() {
            return Err(Error::Range(format!("restriction time {} outside (0, {}]", t, self.horizon())));
        }
        if t == self.horizon() {
            return Ok(self.clone());
        }
        let mut times: Vec<T> = self.times.iter().copied().filter(|&s| s < t).collect();
        times.push(t);
        Self::new(times)
    }

    /// Union with `extra` times inside `(0, horizon)`.
    pub fn refine(&self, extra: &[T]) -> Result<Self> {
        let mut times: Vec<T> = self.times.to_vec();
        for &e in extra {
            if !(e > T::zero() && e < self.horizon()) {
                return Err(Error::Range(format!("refinement time {} outside (0, {})", e, self.horizon())));
            }
            times.push(e);
        }
        times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        times.dedup();
        Self::new(times)
    }
}

/// Piecewise-constant function of time: `values[i]` on `[T_i, T_{i+1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseCurve<T: Scalar> {
    grid: MaturityGrid<T>,
    values: Vec<T>,
}

impl<T: Scalar> PiecewiseCurve<T> {
    pub fn new(grid: MaturityGrid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParam(format!(
                "curve has {} values for {} intervals",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!("non-finite curve value {v}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: MaturityGrid<T>, value: T) -> Self {
        let n = grid.len();
        Self { grid, values: vec![value; n] }
    }

    pub fn grid(&self) -> &MaturityGrid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn value(&self, i: usize) -> T {
        self.values[i]
    }

    pub fn eval(&self, t: T) -> Result<T> {
        Ok(self.values[self.grid.interval_of(t)?])
    }

    /// Exact `∫_a^b c(t) dt`.
    pub fn integrate(&self, a: T, b: T) -> Result<T> {
        let h = self.grid.horizon();
        if !(a >= T::zero() && a <= b && b <= h) {
            return Err(Error::Range(format!("integration bounds [{a}, {b}] outside [0, {h}]")));
        }
        let times = self.grid.times();
        let mut acc = T::zero();
        for (i, &v) in self.values.iter().enumerate() {
            let lo = times[i].max(a);
            let hi = times[i + 1].min(b);
            if hi > lo {
                acc += v * (hi - lo);
            }
        }
        Ok(acc)
    }

    /// `∫_0^{T_j} c` for every grid time, accumulated left to right.
    pub fn cumulative(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.values.len() + 1);
        let mut acc = T::zero();
        out.push(acc);
        for (i, &v) in self.values.iter().enumerate() {
            acc += v * self.grid.dt(i);
            out.push(acc);
        }
        out
    }

    pub fn restrict(&self, t: T) -> Result<Self> {
        let grid = self.grid.restrict(t)?;
        let values = self.values[..grid.len()].to_vec();
        Ok(Self { grid, values })
    }

    /// Resample onto `grid`, which must contain every node of this curve's
    /// grid up to its own horizon.
    pub fn resample(&self, grid: &MaturityGrid<T>) -> Result<Self> {
        if grid.horizon() > self.grid.horizon() {
            return Err(Error::Range("resample target extends past the curve horizon".into()));
        }
        for &s in self.grid.times() {
            if s < grid.horizon() && grid.position(s).is_none() {
                return Err(Error::InvalidGrid(format!("target grid lacks node {s}")));
            }
        }
        let values = grid.times()[..grid.len()]
            .iter()
            .map(|&s| self.eval(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid: grid.clone(), values })
    }

    /// The curve on `[a, b]` re-based so that `a` becomes time 0.
    pub fn window(&self, a: T, b: T) -> Result<Self> {
        let h = self.grid.horizon();
        if !(a >= T::zero() && a < b && b <= h) {
            return Err(Error::Range(format!("window [{a}, {b}] invalid within [0, {h}]")));
        }
        let mut times = vec![T::zero()];
        let mut values = vec![self.eval(a)?];
        for (i, &s) in self.grid.times().iter().enumerate() {
            if s > a && s < b && s - a > times[times.len() - 1] {
                times.push(s - a);
                values.push(self.values[i]);
            }
        }
        if b - a > times[times.len() - 1] {
            times.push(b - a);
        } else {
            values.pop();
            times.pop();
            times.push(b - a);
        }
        Self::new(MaturityGrid::new(times)?, values)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::InvalidGrid("curves live on different grids".into()));
        }
        Ok(Self {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.is_zero())
    }
}

pub fn integrate_curve<T: Scalar>(c: &PiecewiseCurve<T>, a: T, b: T) -> Result<T> {
    c.integrate(a, b)
}

pub fn discount_factor<T: Scalar>(c: &PiecewiseCurve<T>, t: T) -> Result<T> {
    if t < T::zero() {
        return Err(Error::Range(format!("negative time {t}")));
    }
    Ok((-c.integrate(T::zero(), t)?).exp())
}

/// Parameter term structure of one model on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar> {
    pub model: Model,
    pub kappa: PiecewiseCurve<T>,
    pub theta: PiecewiseCurve<T>,
    pub lambda: PiecewiseCurve<T>,
    pub rho: PiecewiseCurve<T>,
    pub v0: T,
}

impl<T: Scalar> ModelParams<T> {
    /// `λ = 0` is admitted so the deterministic-variance limit can be priced.
    pub fn new(
        model: Model,
        kappa: PiecewiseCurve<T>,
        theta: PiecewiseCurve<T>,
        lambda: PiecewiseCurve<T>,
        rho: PiecewiseCurve<T>,
        v0: T,
    ) -> Result<Self> {
        let grid = kappa.grid();
        if theta.grid() != grid || lambda.grid() != grid || rho.grid() != grid {
            return Err(Error::InvalidGrid("kappa, theta, lambda and rho must share one grid".into()));
        }
        if !(v0 > T::zero()) || !v0.is_finite() {
            return Err(Error::InvalidParam(format!("v0 must be positive, got {v0}")));
        }
        let check = |name: &str, c: &PiecewiseCurve<T>, ok: &dyn Fn(T) -> bool| -> Result<()> {
            match c.values().iter().find(|&&v| !ok(v)) {
                Some(v) => Err(Error::InvalidParam(format!("{name} value {v} out of range"))),
                None => Ok(()),
            }
        };
        check("kappa", &kappa, &|v| v > T::zero())?;
        check("theta", &theta, &|v| v > T::zero())?;
        check("lambda", &lambda, &|v| v >= T::zero())?;
        check("rho", &rho, &|v| v >= -T::one() && v <= T::one())?;
        Ok(Self { model, kappa, theta, lambda, rho, v0 })
    }

    /// Constant parameters on a single interval `[0, horizon]`.
    pub fn constant(model: Model, horizon: T, kappa: T, theta: T, lambda: T, rho: T, v0: T) -> Result<Self> {
        let g = MaturityGrid::single(horizon)?;
        Self::new(
            model,
            PiecewiseCurve::constant(g.clone(), kappa),
            PiecewiseCurve::constant(g.clone(), theta),
            PiecewiseCurve::constant(g.clone(), lambda),
            PiecewiseCurve::constant(g, rho),
            v0,
        )
    }

    pub fn grid(&self) -> &MaturityGrid<T> {
        self.kappa.grid()
    }

    pub fn restrict(&self, t: T) -> Result<Self> {
        Ok(Self {
            model: self.model,
            kappa: self.kappa.restrict(t)?,
            theta: self.theta.restrict(t)?,
            lambda: self.lambda.restrict(t)?,
            rho: self.rho.restrict(t)?,
            v0: self.v0,
        })
    }

    pub fn resample(&self, grid: &MaturityGrid<T>) -> Result<Self> {
        Ok(Self {
            model: self.model,
            kappa: self.kappa.resample(grid)?,
            theta: self.theta.resample(grid)?,
            lambda: self.lambda.resample(grid)?,
            rho: self.rho.resample(grid)?,
            v0: self.v0,
        })
    }

    /// `κθ` per interval.
    pub fn drift(&self) -> PiecewiseCurve<T> {
        self.kappa.zip(&self.theta, |k, th| k * th).expect("shared grid")
    }

    /// Feller condition `2κθ > λ²` per interval.
    pub fn feller(&self) -> Vec<bool> {
        (0..self.grid().len())
            .map(|i| {
                let two = T::one() + T::one();
                two * self.kappa.value(i) * self.theta.value(i) > self.lambda.value(i).powi(2)
            })
            .collect()
    }
}

pub fn restrict_params<T: Scalar>(p: &ModelParams<T>, t: T) -> Result<ModelParams<T>> {
    p.restrict(t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarketState<T: Scalar> {
    pub spot: T,
    pub rd: PiecewiseCurve<T>,
    pub rf: PiecewiseCurve<T>,
}

impl<T: Scalar> MarketState<T> {
    pub fn new(spot: T, rd: PiecewiseCurve<T>, rf: PiecewiseCurve<T>) -> Result<Self> {
        if !(spot > T::zero()) || !spot.is_finite() {
            return Err(Error::InvalidParam(format!("spot must be positive, got {spot}")));
        }
        Ok(Self { spot, rd, rf })
    }

    /// Flat rates out to `horizon`.
    pub fn flat(spot: T, rd: T, rf: T, horizon: T) -> Result<Self> {
        let g = MaturityGrid::single(horizon)?;
        Self::new(spot, PiecewiseCurve::constant(g.clone(), rd), PiecewiseCurve::constant(g, rf))
    }

    /// `(∫_0^T r^d, ∫_0^T r^f)`.
    pub fn rate_integrals(&self, t: T) -> Result<(T, T)> {
        Ok((self.rd.integrate(T::zero(), t)?, self.rf.integrate(T::zero(), t)?))
    }

    pub fn forward(&self, t: T) -> Result<T> {
        let (a, b) = self.rate_integrals(t)?;
        Ok(self.spot * (a - b).exp())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptionSpec<T> {
    pub strike: T,
    pub maturity: T,
    pub kind: OptionKind,
}

impl<T: Scalar> OptionSpec<T> {
    pub fn new(strike: T, maturity: T, kind: OptionKind) -> Result<Self> {
        if !(strike > T::zero()) || !strike.is_finite() {
            return Err(Error::InvalidParam(format!("strike must be positive, got {strike}")));
        }
        if !(maturity > T::zero()) || !maturity.is_finite() {
            return Err(Error::InvalidParam(format!("maturity must be positive, got {maturity}")));
        }
        Ok(Self { strike, maturity, kind })
    }

    pub fn put(strike: T, maturity: T) -> Result<Self> {
        Self::new(strike, maturity, OptionKind::Put)
    }

    pub fn call(strike: T, maturity: T) -> Result<Self> {
        Self::new(strike, maturity, OptionKind::Call)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_step() -> PiecewiseCurve<f64> {
        let g = MaturityGrid::new(vec![0.0, 0.5, 1.0]).unwrap();
        PiecewiseCurve::new(g, vec![0.01, 0.03]).unwrap()
    }

    #[test]
    fn grid_rejects_bad_times() {
        assert!(MaturityGrid::new(vec![0.0]).is_err());
        assert!(MaturityGrid::new(vec![0.1, 1.0]).is_err());
        assert!(MaturityGrid::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(MaturityGrid::new(vec![0.0, 1.0, 0.5]).is_err());
    }

    #[test]
    fn eval_is_right_open() {
        let c = two_step();
        assert_eq!(c.eval(0.0).unwrap(), 0.01);
        assert_eq!(c.eval(0.4999).unwrap(), 0.01);
        assert_eq!(c.eval(0.5).unwrap(), 0.03);
        assert_eq!(c.eval(1.0).unwrap(), 0.03);
        assert!(c.eval(1.0000001).is_err());
        assert!(c.eval(-1e-9).is_err());
    }

    #[test]
    fn integrate_examples() {
        let g = MaturityGrid::single(1.0).unwrap();
        let flat = PiecewiseCurve::constant(g, 0.02);
        assert_eq!(flat.integrate(0.0, 1.0).unwrap(), 0.02);
        assert_eq!(flat.integrate(0.3, 0.3).unwrap(), 0.0);
        let c = two_step();
        assert!((c.integrate(0.25, 0.75).unwrap() - 0.01).abs() < 1e-16);
        assert!(c.integrate(0.5, 0.2).is_err());
        assert!(c.integrate(0.0, 1.5).is_err());
    }

    #[test]
    fn discount_examples() {
        let g = MaturityGrid::single(1.0).unwrap();
        assert_eq!(discount_factor(&PiecewiseCurve::constant(g.clone(), 0.0), 1.0).unwrap(), 1.0);
        let c = PiecewiseCurve::constant(g, 0.02);
        assert_eq!(discount_factor(&c, 1.0).unwrap(), (-0.02f64).exp());
        assert_eq!(discount_factor(&c, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn restrict_examples() {
        let g = MaturityGrid::new(vec![0.0, 0.25, 1.0]).unwrap();
        let c = PiecewiseCurve::new(g.clone(), vec![1.0, 2.0]).unwrap();
        assert_eq!(c.restrict(1.0).unwrap(), c);
        let r = c.restrict(0.5).unwrap();
        assert_eq!(r.grid().times(), &[0.0, 0.25, 0.5]);
        assert_eq!(r.values(), &[1.0, 2.0]);
        let single = PiecewiseCurve::constant(MaturityGrid::single(1.0).unwrap(), 3.0);
        let r = single.restrict(0.5).unwrap();
        assert_eq!(r.grid().times(), &[0.0, 0.5]);
        assert!(c.restrict(0.0).is_err());
        assert!(c.restrict(1.5).is_err());
    }

    #[test]
    fn resample_onto_refinement() {
        let c = two_step();
        let fine = c.grid().refine(&[0.2, 0.7]).unwrap();
        let r = c.resample(&fine).unwrap();
        assert_eq!(r.values(), &[0.01, 0.01, 0.03, 0.03]);
        assert_eq!(r.integrate(0.0, 1.0).unwrap(), c.integrate(0.0, 1.0).unwrap());
    }

    #[test]
    fn params_validation() {
        let ok = ModelParams::constant(Model::Heston, 1.0, 5.0, 0.02, 0.4, -0.4, 0.01);
        assert!(ok.is_ok());
        assert!(ModelParams::constant(Model::Heston, 1.0, 0.0, 0.02, 0.4, -0.4, 0.01).is_err());
        assert!(ModelParams::constant(Model::Heston, 1.0, 5.0, 0.02, -0.1, -0.4, 0.01).is_err());
        assert!(ModelParams::constant(Model::Heston, 1.0, 5.0, 0.02, 0.4, -1.4, 0.01).is_err());
        assert!(ModelParams::constant(Model::Heston, 1.0, 5.0, 0.02, 0.4, 0.0, 0.0).is_err());
        assert_eq!(ok.unwrap().feller(), vec![true]);
        let p = ModelParams::constant(Model::Heston, 1.0, 5.0, 0.02, 0.5, -0.4, 0.01).unwrap();
        assert_eq!(p.feller(), vec![false]);
    }

    #[test]
    fn generic_over_f32() {
        let g = MaturityGrid::<f32>::new(vec![0.0, 0.5, 1.0]).unwrap();
        let c = PiecewiseCurve::new(g, vec![1.0f32, 3.0]).unwrap();
        assert_eq!(c.integrate(0.0, 1.0).unwrap(), 2.0);
    }
}
