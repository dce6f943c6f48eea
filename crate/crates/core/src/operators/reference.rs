//! Direct numerical evaluation of `ω` and `φ`, used as a test oracle.
//!
//! An n-fold iterated integral is the last component of the triangular
//! system `y_1' = l^{(1)} e^{K^{(1)}}`, `y_d' = l^{(d)} e^{K^{(d)}} y_{d−1}`,
//! integrated adaptively segment by segment.

use crate::error::{Error, Result};
use crate::ode::{integrate, integrate_piecewise, Tolerance};
use crate::Scalar;

use super::{OperatorKey, MAX_DEPTH};

const TARGET: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature<T> {
    pub value: T,
    /// Difference between two solves at tolerances a decade apart.
    pub error_estimate: T,
    /// False when the estimate misses the relative target of `1e−11`.
    pub converged: bool,
}

/// `ω_t` of `key` by adaptive integration, `0 < t ≤ horizon`.
pub fn quadrature_reference<T: Scalar>(key: &OperatorKey<T>, t: T) -> Result<Quadrature<T>> {
    let key = key.restrict(t)?;
    let grid = key.grid().clone();
    let n = key.depth();
    // Innermost level first.
    let inner: Vec<(Vec<T>, Vec<T>, Vec<T>)> = key
        .pairs()
        .iter()
        .rev()
        .map(|(k, l)| (k.values().to_vec(), k.cumulative(), l.values().to_vec()))
        .collect();
    let times = grid.times().to_vec();
    // Bound on |y_n|: each level contributes at most t·max|l|·max e^K.
    let bound = inner.iter().fold(1.0, |acc, (k, cum, l)| {
        let mut e = 0.0f64;
        for i in 0..k.len() {
            let end = cum[i] + k[i] * (times[i + 1] - times[i]);
            e = e.max(cum[i].exp().to_f64().unwrap_or(f64::MAX)).max(end.exp().to_f64().unwrap_or(f64::MAX));
        }
        let lmax = l.iter().fold(0.0f64, |m, x| m.max(x.abs().to_f64().unwrap_or(f64::MAX)));
        acc * t.to_f64().unwrap_or(f64::MAX) * lmax * e
    });
    let solve = |rtol: f64| {
        let tol = Tolerance { rtol, atol: absolute_floor(rtol, bound), ..Tolerance::default() };
        integrate_piecewise(
            |seg, u: T, y: &[T], dy: &mut [T]| {
                let mut below = T::one();
                for d in 0..n {
                    let (k, cum, l) = &inner[d];
                    let w = l[seg] * (cum[seg] + k[seg] * (u - times[seg])).exp();
                    dy[d] = w * below;
                    below = y[d];
                }
            },
            &times,
            &vec![T::zero(); n],
            tol,
        )
    };
    finish(solve(1e-12)?[n - 1], solve(1e-13)?[n - 1])
}

/// `φ` over one interval by adaptive integration; same conventions as
/// [`phi_interval`](super::phi_interval).
pub fn phi_quadrature<T: Scalar>(specs: &[(T, usize)], dt: T, g: T) -> Result<Quadrature<T>> {
    let n = specs.len();
    if n == 0 || n > MAX_DEPTH {
        return Err(Error::Unsupported(format!("phi depth {n} outside [1, {MAX_DEPTH}]")));
    }
    let inner: Vec<(T, usize)> = specs.iter().rev().copied().collect();
    let span = (g * dt).to_f64().unwrap_or(f64::MAX);
    let gf = g.to_f64().unwrap_or(f64::MAX);
    let bound = inner.iter().fold(1.0, |acc, &(k, p)| {
        let e = (k.to_f64().unwrap_or(f64::MAX) * span).exp().max(1.0);
        acc * span * gf.max(1.0).powi(p as i32) * e
    });
    let solve = |rtol: f64| {
        let tol = Tolerance { rtol, atol: absolute_floor(rtol, bound), ..Tolerance::default() };
        integrate(
            |u: T, y: &[T], dy: &mut [T]| {
                let mut below = T::one();
                for d in 0..n {
                    let (k, p) = inner[d];
                    dy[d] = (u / dt).powi(p as i32) * (k * u).exp() * below;
                    below = y[d];
                }
            },
            T::zero(),
            g * dt,
            &vec![T::zero(); n],
            tol,
        )
    };
    finish(solve(1e-12)?[n - 1], solve(1e-13)?[n - 1])
}

/// Absolute tolerance well below `rtol` times the solution scale. A purely
/// relative test cannot step off zero when the last component grows like a
/// fifth power of time.
fn absolute_floor(rtol: f64, bound: f64) -> f64 {
    (rtol * 1e-3 * bound).clamp(1e-300, 1e-3 * rtol)
}

fn finish<T: Scalar>(coarse: T, fine: T) -> Result<Quadrature<T>> {
    let err = (fine - coarse).abs();
    Ok(Quadrature {
        value: fine,
        error_estimate: err,
        converged: err <= T::of(TARGET) * fine.abs().max(T::one()),
    })
}
