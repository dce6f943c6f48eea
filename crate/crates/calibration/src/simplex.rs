//! Nelder-Mead on the unit box. Trial points are clamped into `[0, 1]^d`.

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    /// The simplex collapsed or the target was reached.
    pub converged: bool,
}

#[derive(Clone, Copy)]
pub(crate) struct Settings {
    pub max_iterations: usize,
    /// Stop as soon as the best value is at or below this.
    pub target: f64,
    /// Initial edge length.
    pub step: f64,
    /// Simplex diameter treated as collapsed.
    pub xtol: f64,
}

fn clamp(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

fn blend(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    // a + t (b − a)
    let mut x: Vec<f64> = a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect();
    clamp(&mut x);
    x
}

/// Restart from the best point until a restart stops improving, which
/// recovers from simplices that collapsed onto a face of the box.
pub(crate) fn minimize(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], s: &Settings) -> Outcome {
    const RESTARTS: usize = 4;
    let mut out = run(&mut f, x0, s);
    for _ in 0..RESTARTS {
        if !out.converged || out.f <= s.target {
            break;
        }
        let budget = Settings { max_iterations: s.max_iterations.saturating_sub(out.iterations), ..*s };
        let next = run(&mut f, &out.x, &budget);
        let improved = next.f < out.f * (1.0 - 1e-9);
        let iterations = out.iterations + next.iterations;
        out = Outcome { iterations, ..if next.f <= out.f { next } else { out } };
        if !improved {
            break;
        }
    }
    out
}

fn run(f: &mut impl FnMut(&[f64]) -> f64, x0: &[f64], s: &Settings) -> Outcome {
    let d = x0.len();
    let mut start = x0.to_vec();
    clamp(&mut start);
    let f0 = f(&start);
    if d == 0 || f0 <= s.target {
        return Outcome { x: start, f: f0, iterations: 0, converged: true };
    }
    let mut pts = vec![(start.clone(), f0)];
    for j in 0..d {
        let mut x = start.clone();
        x[j] += if x[j] + s.step <= 1.0 { s.step } else { -s.step };
        let fx = f(&x);
        pts.push((x, fx));
    }
    let mut it = 0;
    loop {
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = pts[0].1;
        let diameter = pts[1..]
            .iter()
            .map(|p| p.0.iter().zip(&pts[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if best <= s.target || diameter <= s.xtol {
            return Outcome { x: pts[0].0.clone(), f: best, iterations: it, converged: true };
        }
        if it >= s.max_iterations {
            return Outcome { x: pts[0].0.clone(), f: best, iterations: it, converged: false };
        }
        it += 1;
        let centroid: Vec<f64> = (0..d).map(|j| pts[..d].iter().map(|p| p.0[j]).sum::<f64>() / d as f64).collect();
        let (worst, fw) = pts[d].clone();
        let xr = blend(&centroid, &worst, -1.0);
        let fr = f(&xr);
        if fr < best {
            let xe = blend(&centroid, &worst, -2.0);
            let fe = f(&xe);
            pts[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < pts[d - 1].1 {
            pts[d] = (xr, fr);
            continue;
        }
        // Contract towards the better of the worst point and its reflection.
        let (xc, fc) = if fr < fw {
            let x = blend(&centroid, &xr, 0.5);
            let v = f(&x);
            (x, v)
        } else {
            let x = blend(&centroid, &worst, 0.5);
            let v = f(&x);
            (x, v)
        };
        if fc < fw.min(fr) {
            pts[d] = (xc, fc);
            continue;
        }
        let x_best = pts[0].0.clone();
        for p in pts.iter_mut().skip(1) {
            let x = blend(&x_best, &p.0, 0.5);
            let v = f(&x);
            *p = (x, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> Settings {
        Settings { max_iterations: 2000, target: 0.0, step: 0.1, xtol: 1e-12 }
    }

    #[test]
    fn finds_interior_minimum() {
        let r = minimize(|x| (x[0] - 0.3).powi(2) + 10.0 * (x[1] - 0.7).powi(2) + (x[0] - 0.3) * (x[1] - 0.7), &[0.9, 0.1], &settings());
        assert!(r.converged);
        assert!((r.x[0] - 0.3).abs() < 1e-6 && (r.x[1] - 0.7).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn respects_the_box() {
        let r = minimize(|x| (x[0] + 1.0).powi(2) + (x[1] - 0.5).powi(2), &[0.5, 0.5], &settings());
        assert!(r.x[0] == 0.0 && (r.x[1] - 0.5).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn stops_at_target_without_iterating() {
        let r = minimize(|x| x[0] * x[0], &[0.0], &Settings { target: 1e-20, ..settings() });
        assert_eq!(r.iterations, 0);
    }
}
