//! Moments of the CIR and inverse-gamma (IGa) variance processes.
//!
//! Raw moments satisfy linear ODEs in time that are triangular in the
//! moment order. Multiplying by the integrating factor turns the solution
//! into a sum of nested `ω` operators, which is the fast path used here.
//! The ODEs themselves are integrated directly for the general path and
//! for the central moments needed by the error bound.
//!
//! With `K_t = ∫_0^t κ`, both laws share `E V_t = e^{−K_t}(v0 + ω^{(κ,κθ)})`.
//! Level `n` of the raw-moment chain is `(k_n, l_n)`:
//! CIR `(κ, nκθ + n(n−1)λ²/2)`, IGa `(κ − (n−1)λ², nκθ)`.

use crate::curve::{MaturityGrid, Model, ModelParams, PiecewiseCurve};
use crate::error::{Error, Result};
use crate::ode::{integrate, integrate_piecewise, Tolerance};
use crate::operators::{OperatorKey, OperatorState, MAX_DEPTH};
use crate::Scalar;

/// Highest raw moment order supported.
pub const MAX_ORDER: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Cir,
    Iga,
}

/// A variance law with piecewise-constant coefficients.
///
/// The level enters only through the drift `κθ`, which is stored directly
/// so that measure-shifted laws with `κ ≤ 0` stay representable.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceLaw<T: Scalar> {
    pub family: Family,
    pub v0: T,
    pub kappa: PiecewiseCurve<T>,
    pub drift: PiecewiseCurve<T>,
    pub lambda: PiecewiseCurve<T>,
}

impl<T: Scalar> VarianceLaw<T> {
    pub fn new(
        family: Family,
        v0: T,
        kappa: PiecewiseCurve<T>,
        theta: PiecewiseCurve<T>,
        lambda: PiecewiseCurve<T>,
    ) -> Result<Self> {
        if kappa.grid() != theta.grid() || kappa.grid() != lambda.grid() {
            return Err(Error::InvalidGrid("law curves must share one grid".into()));
        }
        if !(v0 > T::zero()) {
            return Err(Error::InvalidParam(format!("v0 must be positive, got {v0}")));
        }
        if kappa.values().iter().chain(theta.values()).any(|&v| !(v > T::zero())) {
            return Err(Error::InvalidParam("kappa and theta must be positive".into()));
        }
        if lambda.values().iter().any(|&v| v < T::zero()) {
            return Err(Error::InvalidParam("lambda must be nonnegative".into()));
        }
        let drift = kappa.zip(&theta, |k, th| k * th)?;
        Ok(Self { family, v0, kappa, drift, lambda })
    }

    /// The variance law of a parameter set: CIR for Heston, IGa for GARCH.
    pub fn from_params(p: &ModelParams<T>) -> Self {
        let family = match p.model {
            Model::Heston => Family::Cir,
            Model::Garch => Family::Iga,
        };
        Self { family, v0: p.v0, kappa: p.kappa.clone(), drift: p.drift(), lambda: p.lambda.clone() }
    }

    pub fn grid(&self) -> &MaturityGrid<T> {
        self.kappa.grid()
    }

    /// `θ = κθ/κ`; infinite where a shifted `κ` vanishes.
    pub fn theta(&self) -> PiecewiseCurve<T> {
        self.drift.zip(&self.kappa, |d, k| d / k).expect("shared grid")
    }

    /// `2κθ > λ²` per interval. Reported only, never enforced.
    pub fn feller(&self) -> Vec<bool> {
        let two = T::of(2.0);
        self.drift.values().iter().zip(self.lambda.values()).map(|(&d, &l)| two * d > l * l).collect()
    }

    /// True when some interval has `κ ≤ 0`, as can happen after a shift.
    pub fn non_mean_reverting(&self) -> bool {
        self.kappa.values().iter().any(|&k| k <= T::zero())
    }

    pub fn restrict(&self, t: T) -> Result<Self> {
        Ok(Self {
            family: self.family,
            v0: self.v0,
            kappa: self.kappa.restrict(t)?,
            drift: self.drift.restrict(t)?,
            lambda: self.lambda.restrict(t)?,
        })
    }

    fn window(&self, s: T, t: T) -> Result<Self> {
        Ok(Self {
            family: self.family,
            v0: self.v0,
            kappa: self.kappa.window(s, t)?,
            drift: self.drift.window(s, t)?,
            lambda: self.lambda.window(s, t)?,
        })
    }

    fn check_time(&self, t: T) -> Result<()> {
        let h = self.grid().horizon();
        if !(t >= T::zero() && t <= h) {
            return Err(Error::Range(format!("t = {t} outside [0, {h}]")));
        }
        Ok(())
    }

    /// `(k_n, l_n)` of the raw-moment chain.
    fn level(&self, n: usize) -> (PiecewiseCurve<T>, PiecewiseCurve<T>) {
        let nf = T::of(n as f64);
        let half_nn1 = T::of((n * (n - 1)) as f64 / 2.0);
        let n1 = T::of((n - 1) as f64);
        match self.family {
            Family::Cir => {
                let l = self.drift.zip(&self.lambda, |d, lam| nf * d + half_nn1 * lam * lam).expect("shared grid");
                (self.kappa.clone(), l)
            }
            Family::Iga => {
                let k = self.kappa.zip(&self.lambda, |k, lam| k - n1 * lam * lam).expect("shared grid");
                (k, self.drift.map(|d| nf * d))
            }
        }
    }

    /// `ln` of the factor turning the chain sum into `E V_t^n`:
    /// CIR `−nK_t`, IGa `∫(n(n−1)λ²/2 − nκ)`.
    fn log_factor(&self, n: usize, t: T) -> Result<T> {
        let nf = T::of(n as f64);
        let k = self.kappa.integrate(T::zero(), t)?;
        Ok(match self.family {
            Family::Cir => -nf * k,
            Family::Iga => {
                let l2 = self.lambda.map(|l| l * l).integrate(T::zero(), t)?;
                T::of((n * (n - 1)) as f64 / 2.0) * l2 - nf * k
            }
        })
    }

    /// `Σ_{j=0}^{n} start[n−j] · Ω_j(t)` where `Ω_j` nests chain levels
    /// `n, n−1, …, n−j+1` and `Ω_0 = 1`. Requires `t` to be the horizon.
    fn chain(&self, n: usize, start: &[T]) -> Result<T> {
        let mut st = OperatorState::new(self.grid().clone());
        let levels: Vec<_> = (1..=n).rev().map(|j| self.level(j)).collect();
        let mut acc = start[n];
        for j in 1..=n {
            let key = OperatorKey::anonymous(levels[..j].to_vec())?;
            acc += start[n - j] * st.omega_horizon(&key)?;
        }
        Ok(acc)
    }

    pub fn mean(&self, t: T) -> Result<T> {
        self.moment_n(t, 1)
    }

    /// `E V_t^n` for `1 ≤ n ≤ 6`. Orders up to 5 use the operator chain; the
    /// sixth would need a 6-fold operator and is integrated as an ODE.
    pub fn moment_n(&self, t: T, n: usize) -> Result<T> {
        if n == 0 || n > MAX_ORDER {
            return Err(Error::Unsupported(format!("moment order {n} outside [1, {MAX_ORDER}]")));
        }
        self.check_time(t)?;
        if t == T::zero() {
            return Ok(self.v0.powi(n as i32));
        }
        if n > MAX_DEPTH {
            return self.moment_n_ode(t, n);
        }
        let law = self.restrict(t)?;
        let start: Vec<T> = (0..=n).map(|i| self.v0.powi(i as i32)).collect();
        Ok(law.log_factor(n, t)?.exp() * law.chain(n, &start)?)
    }

    pub fn variance(&self, t: T) -> Result<T> {
        self.check_time(t)?;
        if t == T::zero() {
            return Ok(T::zero());
        }
        let law = self.restrict(t)?;
        let g = law.grid().clone();
        let lam2 = law.lambda.map(|l| l * l);
        let mut st = OperatorState::new(g);
        let inner = match self.family {
            // e^{−2K}(v0 ω^{(κ,λ²)} + ω^{(κ,λ²),(κ,κθ)})
            Family::Cir => {
                let a = OperatorKey::anonymous(vec![(law.kappa.clone(), lam2.clone())])?;
                let b = OperatorKey::anonymous(vec![(law.kappa.clone(), lam2), (law.kappa.clone(), law.drift.clone())])?;
                self.v0 * st.omega_horizon(&a)? + st.omega_horizon(&b)?
            }
            // e^{−2K}(v0² ω^{(λ²,λ²)} + v0 ω^{(λ²,λ²),(κ−λ²,2κθ)} + ω^{(λ²,λ²),(κ−λ²,2κθ),(κ,κθ)})
            Family::Iga => {
                let outer = (lam2.clone(), lam2);
                let (k2, l2) = law.level(2);
                let (k1, l1) = law.level(1);
                let a = OperatorKey::anonymous(vec![outer.clone()])?;
                let b = OperatorKey::anonymous(vec![outer.clone(), (k2.clone(), l2.clone())])?;
                let c = OperatorKey::anonymous(vec![outer, (k2, l2), (k1, l1)])?;
                let v0 = self.v0;
                v0 * v0 * st.omega_horizon(&a)? + v0 * st.omega_horizon(&b)? + st.omega_horizon(&c)?
            }
        };
        let two_k = T::of(2.0) * law.kappa.integrate(T::zero(), t)?;
        Ok((-two_k).exp() * inner)
    }

    /// `Cov(V_s, V_t) = e^{−∫_s^t κ} Var(V_s)`; arguments are swapped when `s > t`.
    pub fn covariance(&self, s: T, t: T) -> Result<T> {
        let (s, t) = if s > t { (t, s) } else { (s, t) };
        self.check_time(t)?;
        let decay = (-self.kappa.integrate(s, t)?).exp();
        Ok(decay * self.variance(s)?)
    }

    /// `E(V_s^m V_t^n)` for `s ≤ t`, `m + n ≤ 6`.
    ///
    /// On the window `[s, t]` the order-`n` chain starts from
    /// `E V_s^{m+j}`, so the same construction as [`moment_n`](Self::moment_n)
    /// applies with the time origin moved to `s`.
    pub fn mixed_moment(&self, s: T, t: T, m: usize, n: usize) -> Result<T> {
        if m + n == 0 || m + n > MAX_ORDER {
            return Err(Error::Unsupported(format!("mixed order {m}+{n} outside [1, {MAX_ORDER}]")));
        }
        if s > t {
            return Err(Error::Range(format!("mixed moment needs s ≤ t, got {s} > {t}")));
        }
        self.check_time(t)?;
        if n == 0 || s == t {
            return self.moment_at(s, m + n);
        }
        let start = (0..=n).map(|j| self.moment_at(s, m + j)).collect::<Result<Vec<T>>>()?;
        if n > MAX_DEPTH {
            return self.mixed_moment_ode(s, t, &start);
        }
        let win = self.window(s, t)?;
        Ok(win.log_factor(n, t - s)?.exp() * win.chain(n, &start)?)
    }

    fn moment_at(&self, t: T, n: usize) -> Result<T> {
        if n == 0 {
            Ok(T::one())
        } else {
            self.moment_n(t, n)
        }
    }

    /// Rate of `E V^j` in its own ODE: CIR `−jκ`, IGa `j(j−1)λ²/2 − jκ`.
    fn diag(&self, j: usize, i: usize) -> T {
        let jf = T::of(j as f64);
        let base = -jf * self.kappa.value(i);
        match self.family {
            Family::Cir => base,
            Family::Iga => base + T::of((j * (j - 1)) as f64 / 2.0) * self.lambda.value(i).powi(2),
        }
    }

    /// Coupling of `E V^j` to `E V^{j−1}`: CIR `jκθ + j(j−1)λ²/2`, IGa `jκθ`.
    fn coupling(&self, j: usize, i: usize) -> T {
        let jf = T::of(j as f64);
        let d = jf * self.drift.value(i);
        match self.family {
            Family::Cir => d + T::of((j * (j - 1)) as f64 / 2.0) * self.lambda.value(i).powi(2),
            Family::Iga => d,
        }
    }

    /// Integrate the raw-moment system `y_j = E(V_s^m V_u^j)`, `j = 0…n`, over
    /// `[s, t]` from the given starting values.
    fn raw_ode(&self, s: T, t: T, start: &[T], tol: Tolerance) -> Result<Vec<T>> {
        let law = self.window(s, t)?;
        let times = law.grid().times().to_vec();
        let n = start.len() - 1;
        integrate_piecewise(
            |i, _u, y: &[T], dy: &mut [T]| {
                dy[0] = T::zero();
                for j in 1..=n {
                    dy[j] = law.diag(j, i) * y[j] + law.coupling(j, i) * y[j - 1];
                }
            },
            &times,
            start,
            tol,
        )
    }

    fn moment_n_ode(&self, t: T, n: usize) -> Result<T> {
        let start: Vec<T> = (0..=n).map(|j| self.v0.powi(j as i32)).collect();
        Ok(self.raw_ode(T::zero(), t, &start, Tolerance::default())?[n])
    }

    fn mixed_moment_ode(&self, s: T, t: T, start: &[T]) -> Result<T> {
        let n = start.len() - 1;
        Ok(self.raw_ode(s, t, start, Tolerance::default())?[n])
    }

    /// General-path `E V_t^n` by direct ODE integration.
    pub fn moment_n_quadrature(&self, t: T, n: usize) -> Result<T> {
        if n == 0 || n > MAX_ORDER {
            return Err(Error::Unsupported(format!("moment order {n} outside [1, {MAX_ORDER}]")));
        }
        self.check_time(t)?;
        if t == T::zero() {
            return Ok(self.v0.powi(n as i32));
        }
        self.moment_n_ode(t, n)
    }

    /// General-path `E(V_s^m V_t^n)`: every moment comes from the ODE.
    pub fn mixed_moment_quadrature(&self, s: T, t: T, m: usize, n: usize) -> Result<T> {
        if m + n == 0 || m + n > MAX_ORDER || s > t {
            return Err(Error::Unsupported(format!("mixed moment ({m}, {n}) at ({s}, {t})")));
        }
        self.check_time(t)?;
        let at_s = |j: usize| if j == 0 { Ok(T::one()) } else { self.moment_n_quadrature(s, j) };
        if n == 0 || s == t {
            return at_s(m + n);
        }
        let start = (0..=n).map(|j| at_s(m + j)).collect::<Result<Vec<T>>>()?;
        self.mixed_moment_ode(s, t, &start)
    }

    /// Mean and central moments `[m, μ2, μ3, μ4]` at `t` from
    /// `μ_k' = −kκμ_k + ½k(k−1)λ² D_k` with
    /// CIR `D_k = μ_{k−1} + mμ_{k−2}` and IGa `D_k = μ_k + 2mμ_{k−1} + m²μ_{k−2}`.
    pub fn central_moments(&self, t: T) -> Result<[T; 4]> {
        self.central_system(t)
    }

    /// `∫_0^t (E(V_u − E V_u)^4)^{3/4} du`, the Lyapunov surrogate for the
    /// integrated absolute third central moment.
    ///
    /// The integrand behaves like `u^{3/2}` near 0, which defeats adaptive
    /// step control, so it is sampled on a fine grid and integrated with
    /// Simpson's rule on each grid interval.
    pub fn lyapunov_integral(&self, t: T) -> Result<T> {
        const PANELS: usize = 128;
        self.check_time(t)?;
        if t == T::zero() {
            return Ok(T::zero());
        }
        let law = self.restrict(t)?;
        let times = law.grid().times().to_vec();
        let mut y = vec![self.v0, T::zero(), T::zero(), T::zero()];
        let mut total = T::zero();
        for i in 0..law.grid().len() {
            let h = (times[i + 1] - times[i]) / T::of((2 * PANELS) as f64);
            let f = |y: &[T]| y[3].max(T::zero()).powf(T::of(0.75));
            let mut acc = f(&y);
            for j in 1..=2 * PANELS {
                let a = times[i] + h * T::of((j - 1) as f64);
                let b = if j == 2 * PANELS { times[i + 1] } else { times[i] + h * T::of(j as f64) };
                y = integrate(|_u, y: &[T], dy: &mut [T]| law.central_rhs(i, y, dy), a, b, &y, Tolerance::default())?;
                let w = if j == 2 * PANELS { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
                acc += T::of(w) * f(&y);
            }
            total += acc * h / T::of(3.0);
        }
        Ok(total)
    }

    /// Right-hand side of the `[m, μ2, μ3, μ4]` system on interval `i`.
    fn central_rhs(&self, i: usize, y: &[T], dy: &mut [T]) {
        let (k, d, l2) = (self.kappa.value(i), self.drift.value(i), self.lambda.value(i).powi(2));
        let m = y[0];
        let mu = [T::one(), T::zero(), y[1], y[2], y[3]];
        dy[0] = d - k * m;
        for kk in 2..=4 {
            let kf = T::of(kk as f64);
            let c = T::of((kk * (kk - 1)) as f64 / 2.0) * l2;
            let src = match self.family {
                Family::Cir => mu[kk - 1] + m * mu[kk - 2],
                Family::Iga => mu[kk] + T::of(2.0) * m * mu[kk - 1] + m * m * mu[kk - 2],
            };
            dy[kk - 1] = -kf * k * mu[kk] + c * src;
        }
    }

    fn central_system(&self, t: T) -> Result<[T; 4]> {
        self.check_time(t)?;
        if t == T::zero() {
            return Ok([self.v0, T::zero(), T::zero(), T::zero()]);
        }
        let law = self.restrict(t)?;
        let times = law.grid().times().to_vec();
        let y = integrate_piecewise(
            |i, _u, y: &[T], dy: &mut [T]| law.central_rhs(i, y, dy),
            &times,
            &[self.v0, T::zero(), T::zero(), T::zero()],
            Tolerance::default(),
        )?;
        Ok([y[0], y[1], y[2], y[3]])
    }
}

/// The CIR law of `V` under the measure `Q_n` with density `∝ ξ_T^n`:
/// mean reversion `κ − nλρ` with the drift `κθ` unchanged.
pub fn heston_shifted_law<T: Scalar>(params: &ModelParams<T>, n: usize) -> Result<VarianceLaw<T>> {
    if params.model != Model::Heston {
        return Err(Error::ModelMismatch("measure shift is defined for the Heston model only".into()));
    }
    if n > 2 {
        return Err(Error::Unsupported(format!("measure shift order {n} outside [0, 2]")));
    }
    let nf = T::of(n as f64);
    let lr = params.lambda.zip(&params.rho, |l, r| l * r)?;
    let kappa = params.kappa.zip(&lr, |k, x| k - nf * x)?;
    Ok(VarianceLaw {
        family: Family::Cir,
        v0: params.v0,
        kappa,
        drift: params.drift(),
        lambda: params.lambda.clone(),
    })
}
