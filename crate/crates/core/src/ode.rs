//! Adaptive Dormand-Prince 5(4) integration of small ODE systems.
//!
//! Serves as the general (non-recursive) evaluation route for nested time
//! integrals: an n-fold iterated integral is the last component of a
//! triangular linear system, and moment recursions are linear ODEs.

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { rtol: 1e-12, atol: 1e-300, max_steps: 2_000_000 }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights are A[6]; E holds (fifth − fourth) order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `y' = f(t, y)` from `t0` to `t1`.
pub fn integrate<T: Scalar, F>(mut f: F, t0: T, t1: T, y0: &[T], tol: Tolerance) -> Result<Vec<T>>
where
    F: FnMut(T, &[T], &mut [T]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    if t1 == t0 {
        return Ok(y);
    }
    if t1 < t0 {
        return Err(Error::Range(format!("backward integration from {t0} to {t1}")));
    }
    let rtol = T::of(tol.rtol);
    let atol = T::of(tol.atol);
    let span = t1 - t0;
    let mut h = span * T::of(1e-3);
    let mut t = t0;
    let mut k = vec![vec![T::zero(); n]; 7];
    let mut stage = vec![T::zero(); n];
    let mut y_new = vec![T::zero(); n];
    f(t, &y, &mut k[0]);
    let mut steps = 0usize;
    while t < t1 {
        steps += 1;
        if steps > tol.max_steps {
            return Err(Error::Numeric(format!("ODE step limit reached at t = {t}")));
        }
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        for s in 1..7 {
            for j in 0..n {
                let mut acc = y[j];
                for (r, kr) in k.iter().enumerate().take(s) {
                    let a = A[s][r];
                    if a != 0.0 {
                        acc += h * T::of(a) * kr[j];
                    }
                }
                stage[j] = acc;
            }
            let tail = &mut k[s..];
            f(t + T::of(C[s]) * h, &stage, &mut tail[0]);
        }
        // Stage 7 was evaluated at the fifth-order solution (FSAL).
        let mut err = T::zero();
        for j in 0..n {
            y_new[j] = stage[j];
            let mut e = T::zero();
            for (r, kr) in k.iter().enumerate() {
                if E[r] != 0.0 {
                    e += T::of(E[r]) * kr[j];
                }
            }
            let sc = atol + rtol * y[j].abs().max(y_new[j].abs());
            let q = (h * e / sc).abs();
            err = err.max(q);
        }
        if !err.is_finite() {
            return Err(Error::Numeric("non-finite ODE state".into()));
        }
        if err <= T::one() {
            t = if last { t1 } else { t + h };
            y.copy_from_slice(&y_new);
            let (first, rest) = k.split_at_mut(1);
            first[0].copy_from_slice(&rest[5]);
        }
        let factor = if err == T::zero() {
            T::of(5.0)
        } else {
            (T::of(0.9) * err.powf(T::of(-0.2))).min(T::of(5.0)).max(T::of(0.2))
        };
        h = h * factor;
        if h <= T::epsilon() * span {
            return Err(Error::Numeric(format!("ODE step size underflow at t = {t}")));
        }
    }
    Ok(y)
}

/// Integrate across consecutive breakpoints, restarting the step control
/// at each one. `f` receives the segment index so piecewise coefficients
/// never see the value from the neighbouring segment at a shared endpoint.
pub fn integrate_piecewise<T: Scalar, F>(mut f: F, breaks: &[T], y0: &[T], tol: Tolerance) -> Result<Vec<T>>
where
    F: FnMut(usize, T, &[T], &mut [T]),
{
    let mut y = y0.to_vec();
    for (i, w) in breaks.windows(2).enumerate() {
        y = integrate(|t, y: &[T], dy: &mut [T]| f(i, t, y, dy), w[0], w[1], &y, tol)?;
    }
    Ok(y)
}
