//! Control-variate regression.

use svexp_core::curve::PiecewiseCurve;
use svexp_core::moments::VarianceLaw;

use crate::{MCEstimate, Result};

/// `mean(f − βᵀz)` with `β` from least squares of `f` on the controls `zs`,
/// each already shifted by its known mean. Controls with no sample variance
/// (`ξ ≡ 1` at `ρ = 0`, deterministic variance at `λ = 0`) are dropped.
pub(crate) fn regress(f: &[f64], zs: &[Vec<f64>], paths: usize, truncations: u64) -> MCEstimate {
    let nf = f.len() as f64;
    let mean = |x: &[f64]| x.iter().sum::<f64>() / nf;
    let centre = |x: &[f64]| {
        let m = mean(x);
        x.iter().map(|v| v - m).collect::<Vec<f64>>()
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let used: Vec<&Vec<f64>> = zs
        .iter()
        .filter(|z| {
            let c = centre(z);
            let scale = z.iter().map(|v| v * v).sum::<f64>();
            dot(&c, &c) > 1e-24 * scale
        })
        .collect();
    let cz: Vec<Vec<f64>> = used.iter().map(|z| centre(z)).collect();
    let cf = centre(f);
    let k = cz.len();
    let mut a: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| dot(&cz[i], &cz[j])).collect()).collect();
    let mut beta: Vec<f64> = (0..k).map(|i| dot(&cz[i], &cf)).collect();
    // Gaussian elimination on the k × k normal equations, k ≤ 2.
    for i in 0..k {
        for j in i + 1..k {
            let m = a[j][i] / a[i][i];
            for c in i..k {
                a[j][c] -= m * a[i][c];
            }
            beta[j] -= m * beta[i];
        }
    }
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|c| a[i][c] * beta[c]).sum();
        beta[i] = (beta[i] - s) / a[i][i];
    }
    let value = mean(f) - used.iter().zip(&beta).map(|(z, b)| b * mean(z)).sum::<f64>();
    let ss: f64 = (0..f.len())
        .map(|i| {
            let r = cf[i] - cz.iter().zip(&beta).map(|(z, b)| b * z[i]).sum::<f64>();
            r * r
        })
        .sum();
    let dof = (f.len() - k - 1).max(1) as f64;
    MCEstimate { value, stderr: (ss / dof / nf).sqrt(), paths, truncations }
}

/// Exact `∫_0^t (1 − ρ_u²) E V_u du` from the interval-wise mean solution.
pub(crate) fn weighted_mean_integral(law: &VarianceLaw<f64>, rho: &PiecewiseCurve<f64>, t: f64) -> Result<f64> {
    let law = law.restrict(t)?;
    let times = law.grid().times().to_vec();
    let mut m = law.v0;
    let mut acc = 0.0;
    for i in 0..law.grid().len() {
        let dt = times[i + 1] - times[i];
        let (k, d) = (law.kappa.value(i), law.drift.value(i));
        let w = 1.0 - rho.value(i).powi(2);
        // E V = d/k + (m − d/k) e^{−k s}, written to stay finite as k → 0.
        let decay = (-k * dt).exp();
        let em1 = if k.abs() * dt < 1e-8 { dt * (1.0 - 0.5 * k * dt) } else { -(-k * dt).exp_m1() / k };
        let ramp = if k.abs() * dt < 1e-8 { 0.5 * dt * dt } else { (dt - em1) / k };
        acc += w * (m * em1 + d * ramp);
        m = m * decay + d * em1;
    }
    Ok(acc)
}
