//! Time discretisation shared by all estimators.

use svexp_core::curve::PiecewiseCurve;
use svexp_core::moments::VarianceLaw;

use crate::{McError, Result};

const DAYS_PER_YEAR: f64 = 365.0;

/// A run of equal steps with constant coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub steps: usize,
    pub dt: f64,
    pub kappa: f64,
    /// `κθ`.
    pub drift: f64,
    pub lambda: f64,
    pub rho: f64,
    /// Record path state at the end of this segment.
    pub snapshot: bool,
}

/// Step layout up to the last snapshot time. Segment ends are the union of
/// parameter nodes, snapshot times and any extra breaks; each segment of
/// length `L` gets `ceil(L · 365 · steps_per_day)` equal steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    segments: Vec<Segment>,
}

impl Plan {
    pub fn new(
        law: &VarianceLaw<f64>,
        rho: &PiecewiseCurve<f64>,
        snapshots: &[f64],
        breaks: &[f64],
        steps_per_day: u32,
    ) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(McError::Config("no snapshot times".into()));
        }
        if snapshots.windows(2).any(|w| !(w[1] > w[0])) || !(snapshots[0] > 0.0) {
            return Err(McError::Config("snapshot times must be positive and increasing".into()));
        }
        if law.grid() != rho.grid() {
            return Err(McError::Config("correlation curve must share the law's grid".into()));
        }
        let end = *snapshots.last().expect("non-empty");
        if end > law.grid().horizon() {
            return Err(McError::Config(format!("snapshot {end} beyond the parameter horizon")));
        }
        let mut nodes: Vec<f64> = law
            .grid()
            .times()
            .iter()
            .chain(breaks)
            .copied()
            .filter(|&t| t > 0.0 && t < end)
            .chain(snapshots.iter().copied())
            .collect();
        nodes.push(0.0);
        nodes.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        nodes.dedup();
        let per_year = DAYS_PER_YEAR * steps_per_day as f64;
        let mut segments = Vec::with_capacity(nodes.len());
        for w in nodes.windows(2) {
            let (a, b) = (w[0], w[1]);
            let i = law.grid().interval_of(a)?;
            let steps = (((b - a) * per_year) - 1e-9).ceil().max(1.0) as usize;
            segments.push(Segment {
                start: a,
                steps,
                dt: (b - a) / steps as f64,
                kappa: law.kappa.value(i),
                drift: law.drift.value(i),
                lambda: law.lambda.value(i),
                rho: rho.value(i),
                snapshot: snapshots.contains(&b),
            });
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_steps(&self) -> usize {
        self.segments.iter().map(|s| s.steps).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use svexp_core::curve::MaturityGrid;
    use svexp_core::moments::Family;

    #[test]
    fn steps_follow_the_day_count() {
        let g = MaturityGrid::new(vec![0.0, 0.25, 1.0]).unwrap();
        let c = |v| PiecewiseCurve::constant(g.clone(), v);
        let law = VarianceLaw::new(Family::Cir, 0.01, c(5.0), c(0.02), c(0.4)).unwrap();
        let plan = Plan::new(&law, &c(0.0), &[1.0 / 12.0, 0.5], &[], 24).unwrap();
        let steps: Vec<usize> = plan.segments().iter().map(|s| s.steps).collect();
        assert_eq!(steps, vec![730, 1460, 2190]);
        let snaps: Vec<bool> = plan.segments().iter().map(|s| s.snapshot).collect();
        assert_eq!(snaps, vec![true, false, true]);
    }
}
