//! The path-stepping loop, run on a few paths in lockstep so that the
//! dependent square-root/exponential chains of different paths overlap.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::path::Plan;
use crate::PathSnapshot;

pub(crate) const LANES: usize = 16;

/// State of one path at a snapshot, including log-spot when simulated.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Record {
    pub snap: PathSnapshot,
    /// `ln(S_t/S_0)`.
    pub x: f64,
}

pub(crate) struct Kernel<'a> {
    pub plan: &'a Plan,
    pub v0: f64,
    pub cir: bool,
    pub iga_exact: bool,
    /// `r_d − r_f` per plan segment; the spot is simulated only when set.
    pub carries: Option<&'a [f64]>,
}

impl Kernel<'_> {
    /// Simulate one path per rng, or an antithetic pair per rng when
    /// `mirror` is set (lanes `2i`, `2i+1` share stream `i` with opposite
    /// signs). Returns the records of each lane at every snapshot and the
    /// number of negative variance proposals.
    pub fn run(&self, rngs: &mut [ChaCha8Rng], mirror: bool) -> (Vec<Vec<Record>>, u64) {
        let width = if mirror { 2 } else { 1 };
        let n = rngs.len() * width;
        debug_assert!(n <= LANES);
        let mut v = [self.v0; LANES];
        let mut int_v = [0.0; LANES];
        let mut stoch = [0.0; LANES];
        let mut x = [0.0; LANES];
        let mut zb = [0.0; LANES];
        let mut zz = [0.0; LANES];
        let mut trunc = 0u64;
        // ρ is constant per segment, so the ρ-weighted time integrals are
        // accumulated segment-wise from the plain one.
        let mut int_wv = [0.0; LANES];
        let mut int_r2v = [0.0; LANES];
        let mut out: Vec<Vec<Record>> = vec![Vec::new(); n];
        for (si, seg) in self.plan.segments().iter().enumerate() {
            let dt = seg.dt;
            let sq = dt.sqrt();
            let (rho, lam, kap, drift) = (seg.rho, seg.lambda, seg.kappa, seg.drift);
            let rbar = (1.0 - rho * rho).sqrt();
            let gbm_drift = -(kap + 0.5 * lam * lam) * dt;
            let half_drift_dt = 0.5 * drift * dt;
            let carry = self.carries.map(|c| c[si]);
            let seg_start = int_v;
            for _ in 0..seg.steps {
                draw(rngs, mirror, sq, &mut zb);
                if carry.is_some() {
                    draw(rngs, mirror, sq, &mut zz);
                }
                let c = Coeffs { dt, rho, rbar, lam, kap, drift, gbm_drift, half_drift_dt, carry: carry.unwrap_or(0.0) };
                let lanes = Lanes { v: &mut v[..n], int_v: &mut int_v[..n], stoch: &mut stoch[..n], x: &mut x[..n] };
                let spot = carry.is_some();
                let corr = rho != 0.0;
                trunc += match (self.iga_exact, self.cir, spot, corr) {
                    (true, _, false, false) => step::<IGA, false, false>(&c, lanes, &zb, &zz),
                    (true, _, _, _) => step::<IGA, true, true>(&c, lanes, &zb, &zz),
                    (false, true, false, _) => step::<CIR, false, true>(&c, lanes, &zb, &zz),
                    (false, true, true, _) => step::<CIR, true, true>(&c, lanes, &zb, &zz),
                    (false, false, false, _) => step::<LINEAR, false, true>(&c, lanes, &zb, &zz),
                    (false, false, true, _) => step::<LINEAR, true, true>(&c, lanes, &zb, &zz),
                };
            }
            for j in 0..n {
                let d = int_v[j] - seg_start[j];
                int_wv[j] += (1.0 - rho * rho) * d;
                int_r2v[j] += rho * rho * d;
            }
            if seg.snapshot {
                for j in 0..n {
                    out[j].push(Record {
                        snap: PathSnapshot {
                            v: v[j].max(0.0),
                            int_v: int_v[j],
                            int_wv: int_wv[j],
                            stoch: stoch[j],
                            int_rho2_v: int_r2v[j],
                        },
                        x: x[j],
                    });
                }
            }
        }
        (out, trunc)
    }
}

const CIR: u8 = 0;
const LINEAR: u8 = 1;
const IGA: u8 = 2;

struct Coeffs {
    dt: f64,
    rho: f64,
    rbar: f64,
    lam: f64,
    kap: f64,
    drift: f64,
    gbm_drift: f64,
    half_drift_dt: f64,
    carry: f64,
}

struct Lanes<'a> {
    v: &'a mut [f64],
    int_v: &'a mut [f64],
    stoch: &'a mut [f64],
    x: &'a mut [f64],
}

/// One time step on every lane. `SCHEME` picks the variance update:
/// truncated Euler with `√V` or `V` diffusion, or the explicit IGa step.
#[inline(always)]
fn step<const SCHEME: u8, const SPOT: bool, const CORR: bool>(c: &Coeffs, l: Lanes<'_>, zb: &[f64; LANES], zz: &[f64; LANES]) -> u64 {
    let mut trunc = 0;
    for j in 0..l.v.len() {
        let db = zb[j];
        let v = l.v[j];
        let vp = v.max(0.0);
        let next = match SCHEME {
            IGA => {
                let r = (c.gbm_drift + c.lam * db).exp();
                r * v + c.half_drift_dt * (r + 1.0)
            }
            CIR => v + (c.drift - c.kap * vp) * c.dt + c.lam * vp.sqrt() * db,
            _ => v + (c.drift - c.kap * vp) * c.dt + c.lam * vp * db,
        };
        trunc += (next < 0.0) as u64;
        if CORR || SPOT {
            let root = vp.sqrt();
            l.stoch[j] += c.rho * root * db;
            if SPOT {
                l.x[j] += (c.carry - 0.5 * vp) * c.dt + root * (c.rho * db + c.rbar * zz[j]);
            }
        }
        l.int_v[j] += 0.5 * (vp + next.max(0.0)) * c.dt;
        l.v[j] = next;
    }
    trunc
}

/// Scaled normals, one per stream, duplicated with flipped sign when mirrored.
fn draw(rngs: &mut [ChaCha8Rng], mirror: bool, scale: f64, z: &mut [f64; LANES]) {
    for (i, rng) in rngs.iter_mut().enumerate() {
        let e: f64 = StandardNormal.sample(rng);
        if mirror {
            z[2 * i] = scale * e;
            z[2 * i + 1] = -(scale * e);
        } else {
            z[i] = scale * e;
        }
    }
}
