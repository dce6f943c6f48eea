//! The `φ` family on a single grid interval.
//!
//! `φ_{T_i,t}^{(k_n,p_n),…,(k_1,p_1)} = ∫_{T_i}^t γ^{p_n} e^{k_n(u−T_i)} φ_{T_i,u}^{(k_{n−1},p_{n−1}),…} du`
//! with `γ(u) = (u − T_i)/ΔT_i`. Everything here works in the scaled
//! variables `a = kΔT`, `g = γ(t)`, where `φ = ΔT^n Φ(a, g)`.
//!
//! The integration-by-parts recursion divides by `a`. For `0 < |a| < 1`, or
//! when the power of `γ` exceeds `|a g|`, the outer exponential is expanded
//! in its Taylor series instead, which turns every term into the exactly
//! solvable `a = 0` case.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::Scalar;

/// Maximum nesting depth of any `φ` or `ω`.
pub const MAX_DEPTH: usize = 5;

/// Scaled rates with `|a|` at or below this are treated as exactly zero.
pub const ZERO_RATE: f64 = 1e-12;

/// Below this `|a|` the outer exponential is series-expanded.
const SERIES_RATE: f64 = 1.0;

const MAX_TERMS: usize = 400;

/// One level of a `φ` specification: scaled rate and power of `γ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Level<T> {
    pub a: T,
    pub p: usize,
}

/// `φ` over one interval of length `dt`, evaluated at scaled time `g ∈ (0, 1]`.
/// `specs` holds `(k, p)` outermost-first with unscaled rates `k`.
pub fn phi_interval<T: Scalar>(specs: &[(T, usize)], dt: T, g: T) -> Result<T> {
    if specs.is_empty() || specs.len() > MAX_DEPTH {
        return Err(Error::Unsupported(format!("phi depth {} outside [1, {MAX_DEPTH}]", specs.len())));
    }
    if !(g > T::zero() && g <= T::one()) {
        return Err(Error::Range(format!("scaled time {g} outside (0, 1]")));
    }
    let levels: Vec<Level<T>> = specs.iter().map(|&(k, p)| Level { a: k * dt, p }).collect();
    let mut ctx = Phi::new(g);
    Ok(dt.powi(specs.len() as i32) * ctx.eval(&levels))
}

/// Memoised evaluator of scaled `Φ` at a fixed `g`.
pub(crate) struct Phi<T> {
    g: T,
    memo: HashMap<Vec<(u64, usize)>, T>,
}

impl<T: Scalar> Phi<T> {
    pub(crate) fn new(g: T) -> Self {
        Self { g, memo: HashMap::new() }
    }

    fn is_zero(a: T) -> bool {
        a.abs() <= T::of(ZERO_RATE)
    }

    pub(crate) fn eval(&mut self, levels: &[Level<T>]) -> T {
        let key: Vec<(u64, usize)> = levels.iter().map(|l| (l.a.f64().to_bits(), l.p)).collect();
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let v = if levels.len() == 1 {
            self.single(levels[0].a, levels[0].p)
        } else {
            self.nested(levels)
        };
        self.memo.insert(key, v);
        v
    }

    /// `∫_0^g s^p e^{a s} ds`.
    fn single(&mut self, a: T, p: usize) -> T {
        let g = self.g;
        let pf = T::of(p as f64);
        if Self::is_zero(a) {
            return g.powi(p as i32 + 1) / (pf + T::one());
        }
        if p == 0 {
            return (a * g).exp_m1() / a;
        }
        if (a * g).abs() >= pf {
            // Downward error amplification p/|a g| ≤ 1: the recursion is stable.
            let prev = self.single(a, p - 1);
            return (g.powi(p as i32) * (a * g).exp() - pf * prev) / a;
        }
        // Positive-term series.
        let mut sum = T::zero();
        if a > T::zero() {
            let ag = a * g;
            let mut c = g.powi(p as i32 + 1);
            for m in 0..MAX_TERMS {
                let term = c / T::of((p + m + 1) as f64);
                sum += term;
                if term <= T::epsilon() * sum * T::of(0.01) {
                    break;
                }
                c = c * ag / T::of((m + 1) as f64);
            }
            sum
        } else {
            let b = -a * g;
            let mut term = T::one() / (pf + T::one());
            for m in 0..MAX_TERMS {
                sum += term;
                if term <= T::epsilon() * sum * T::of(0.01) {
                    break;
                }
                term = term * b / T::of((p + m + 2) as f64);
            }
            (a * g).exp() * g.powi(p as i32 + 1) * sum
        }
    }

    fn nested(&mut self, levels: &[Level<T>]) -> T {
        let g = self.g;
        let Level { a, p } = levels[0];
        let rest = &levels[1..];
        let pf = T::of(p as f64);
        if Self::is_zero(a) {
            // ΔT/(p+1) [γ^{p+1} φ^{rest} − φ^{(k_{n−1}, p + p_{n−1} + 1), …}]
            let inner = self.eval(rest);
            let mut merged = rest.to_vec();
            merged[0].p += p + 1;
            let tail = self.eval(&merged);
            return (g.powi(p as i32 + 1) * inner - tail) / (pf + T::one());
        }
        // The by-parts recursion lowers p one step at a time, amplifying
        // errors by p/|a g| per step; past that point expand instead.
        if a.abs() < T::of(SERIES_RATE) || (a * g).abs() < pf {
            // e^{a s} = Σ (a s)^m / m!
            let mut sum = T::zero();
            let mut coef = T::one();
            let mut shifted = levels.to_vec();
            shifted[0].a = T::zero();
            for m in 0..MAX_TERMS {
                shifted[0].p = p + m;
                let term = coef * self.eval(&shifted);
                sum += term;
                if m > 2 && term.abs() <= T::epsilon() * sum.abs() * T::of(0.01) {
                    break;
                }
                coef = coef * a / T::of((m + 1) as f64);
            }
            return sum;
        }
        // Integration by parts with dv = e^{a s} ds.
        let inner = self.eval(rest);
        let mut merged: Vec<Level<T>> = Vec::with_capacity(rest.len());
        merged.push(Level { a: a + rest[0].a, p: p + rest[0].p });
        merged.extend_from_slice(&rest[1..]);
        let tail = self.eval(&merged);
        let mut acc = g.powi(p as i32) * (a * g).exp() * inner - tail;
        if p >= 1 {
            let mut lowered = levels.to_vec();
            lowered[0].p = p - 1;
            acc -= pf * self.eval(&lowered);
        }
        acc / a
    }
}
