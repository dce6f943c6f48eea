//! Iterated integral operators
//!
//! `ω_T^{(k,l)} = ∫_0^T l_u e^{∫_0^u k} du`, and the n-fold operator nests
//! `ω^{(k^{(n−1)},l^{(n−1)}),…}` inside the integrand of the outermost level.
//! Keys list their `(k, l)` pairs outermost-first, so `pairs[0]` is
//! `(k^{(n)}, l^{(n)})` and `pairs[n−1]` is `(k^{(1)}, l^{(1)})`.
//!
//! [`OperatorState`] advances each key one grid interval at a time from the
//! values cached at the left endpoint, which is what makes bootstrap
//! calibration cheap: fitting interval `i` only ever integrates over `i`.

mod phi;
pub mod reference;

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::curve::{MaturityGrid, PiecewiseCurve};
use crate::error::{Error, Result};
use crate::Scalar;

pub use phi::{phi_interval, Level, MAX_DEPTH, ZERO_RATE};
pub use reference::{phi_quadrature, quadrature_reference, Quadrature};

use phi::Phi;

/// One level of an operator: rate curve `k` and weight curve `l`.
pub type Pair<T> = (PiecewiseCurve<T>, PiecewiseCurve<T>);

/// An n-fold operator specification, `1 ≤ n ≤ 5`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorKey<T: Scalar> {
    label: String,
    pairs: Vec<Pair<T>>,
}

impl<T: Scalar> OperatorKey<T> {
    /// `label` names the key inside an [`OperatorState`]. Two keys with the
    /// same label are treated as the same operator whose frontier interval
    /// may have changed.
    pub fn new(label: impl Into<String>, pairs: Vec<Pair<T>>) -> Result<Self> {
        if pairs.is_empty() || pairs.len() > MAX_DEPTH {
            return Err(Error::Unsupported(format!("operator depth {} outside [1, {MAX_DEPTH}]", pairs.len())));
        }
        let grid = pairs[0].0.grid();
        if pairs.iter().any(|(k, l)| k.grid() != grid || l.grid() != grid) {
            return Err(Error::InvalidGrid("operator curves live on different grids".into()));
        }
        Ok(Self { label: label.into(), pairs })
    }

    /// Key labelled by a hash of its grid and curve values.
    pub fn anonymous(pairs: Vec<Pair<T>>) -> Result<Self> {
        let mut h = DefaultHasher::new();
        if let Some((k, _)) = pairs.first() {
            for t in k.grid().times() {
                t.f64().to_bits().hash(&mut h);
            }
        }
        for (k, l) in &pairs {
            for v in k.values().iter().chain(l.values()) {
                v.f64().to_bits().hash(&mut h);
            }
        }
        Self::new(format!("anon-{}-{:016x}", pairs.len(), h.finish()), pairs)
    }

    /// Convenience constructor from constant `(k, l)` values on `grid`.
    pub fn constant(grid: &MaturityGrid<T>, levels: &[(T, T)]) -> Result<Self> {
        let pairs = levels
            .iter()
            .map(|&(k, l)| (PiecewiseCurve::constant(grid.clone(), k), PiecewiseCurve::constant(grid.clone(), l)))
            .collect();
        Self::anonymous(pairs)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn depth(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[Pair<T>] {
        &self.pairs
    }

    pub fn grid(&self) -> &MaturityGrid<T> {
        self.pairs[0].0.grid()
    }

    /// The same operator with every curve restricted to `[0, t]`.
    pub fn restrict(&self, t: T) -> Result<Self> {
        let pairs = self
            .pairs
            .iter()
            .map(|(k, l)| Ok((k.restrict(t)?, l.restrict(t)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { label: self.label.clone(), pairs })
    }

    fn levels_at(&self, i: usize) -> Vec<(T, T)> {
        self.pairs.iter().map(|(k, l)| (k.value(i), l.value(i))).collect()
    }
}

/// Cached values of one key at consecutive grid times.
#[derive(Clone, Debug)]
struct Track<T> {
    depth: usize,
    /// `omega[j][d − 1]`: suffix of depth `d` at `T_j`.
    omega: Vec<Vec<T>>,
    /// `cum_k[j][p]`: `∫_0^{T_j} k` of pair `p`.
    cum_k: Vec<Vec<T>>,
    /// `(k_i, l_i)` of every pair on each advanced interval.
    used: Vec<Vec<(T, T)>>,
}

impl<T: Scalar> Track<T> {
    fn new(depth: usize) -> Self {
        Self {
            depth,
            omega: vec![vec![T::zero(); depth]],
            cum_k: vec![vec![T::zero(); depth]],
            used: Vec::new(),
        }
    }

    /// Number of intervals advanced so far.
    fn len(&self) -> usize {
        self.used.len()
    }

    fn truncate(&mut self, j: usize) {
        self.omega.truncate(j + 1);
        self.cum_k.truncate(j + 1);
        self.used.truncate(j);
    }

    fn first_mismatch(&self, key: &OperatorKey<T>) -> Option<usize> {
        (0..self.len()).find(|&i| {
            let want = key.levels_at(i);
            self.used[i].iter().zip(&want).any(|(a, b)| a.0 != b.0 || a.1 != b.1)
        })
    }
}

/// Grid-time cache of operator values with commit and rollback.
///
/// Values at grid times up to the committed index never change. Work past
/// the commit point is scratch and is discarded by [`rollback`](Self::rollback)
/// or overwritten when a key's frontier values change.
#[derive(Clone, Debug)]
pub struct OperatorState<T: Scalar> {
    grid: MaturityGrid<T>,
    tracks: BTreeMap<String, Track<T>>,
    committed: usize,
    advances: Vec<u64>,
}

impl<T: Scalar> OperatorState<T> {
    pub fn new(grid: MaturityGrid<T>) -> Self {
        let n = grid.len();
        Self { grid, tracks: BTreeMap::new(), committed: 0, advances: vec![0; n] }
    }

    pub fn grid(&self) -> &MaturityGrid<T> {
        &self.grid
    }

    /// Index of the last committed grid time.
    pub fn committed(&self) -> usize {
        self.committed
    }

    /// Number of single-interval advances performed on each interval.
    pub fn advance_counts(&self) -> &[u64] {
        &self.advances
    }

    /// `e_t^{(k…)} = exp(∫_0^t Σ k)`.
    pub fn e_factor(&self, t: T, ks: &[&PiecewiseCurve<T>]) -> Result<T> {
        let mut s = T::zero();
        for k in ks {
            self.check_grid(k)?;
            s += k.integrate(T::zero(), t)?;
        }
        Ok(s.exp())
    }

    /// `φ_{T_i,t}` with `(k, p)` specs listed outermost-first.
    pub fn phi(&self, i: usize, t: T, specs: &[(&PiecewiseCurve<T>, usize)]) -> Result<T> {
        if i >= self.grid.len() {
            return Err(Error::Range(format!("interval {i} outside grid of {} intervals", self.grid.len())));
        }
        let (lo, hi) = (self.grid.times()[i], self.grid.times()[i + 1]);
        if !(t > lo && t <= hi) {
            return Err(Error::Range(format!("t = {t} outside ({lo}, {hi}]")));
        }
        let mut raw = Vec::with_capacity(specs.len());
        for (k, p) in specs {
            self.check_grid(k)?;
            raw.push((k.value(i), *p));
        }
        let dt = self.grid.dt(i);
        phi_interval(&raw, dt, (t - lo) / dt)
    }

    fn check_grid(&self, c: &PiecewiseCurve<T>) -> Result<()> {
        if c.grid() != &self.grid {
            return Err(Error::InvalidGrid("curve grid differs from operator state grid".into()));
        }
        Ok(())
    }

    fn check_key(&self, key: &OperatorKey<T>) -> Result<()> {
        if key.grid() != &self.grid {
            return Err(Error::InvalidGrid(format!("key {} lives on a different grid", key.label)));
        }
        if let Some(tr) = self.tracks.get(&key.label) {
            if tr.depth != key.depth() {
                return Err(Error::State(format!("label {} reused with a different depth", key.label)));
            }
        }
        Ok(())
    }

    /// Advance `key` over interval `i`, from `T_i` to `T_{i+1}`, and return
    /// `ω_{T_{i+1}}`. Requires the key to be cached at `T_i` with matching
    /// values on every earlier interval.
    pub fn omega_advance(&mut self, key: &OperatorKey<T>, i: usize) -> Result<T> {
        self.check_key(key)?;
        if i >= self.grid.len() {
            return Err(Error::Range(format!("interval {i} outside grid of {} intervals", self.grid.len())));
        }
        if i < self.committed {
            return Err(Error::State(format!("interval {i} is committed (checkpoint at {})", self.committed)));
        }
        let n = key.depth();
        let track = self.tracks.entry(key.label.clone()).or_insert_with(|| Track::new(n));
        if track.len() < i {
            return Err(Error::State(format!("key {} is not cached at T_{i}", key.label)));
        }
        if let Some(f) = track.first_mismatch(key) {
            if f < i {
                return Err(Error::State(format!(
                    "key {} differs from its cached values on interval {f}",
                    key.label
                )));
            }
        }
        track.truncate(i);
        advance_track(track, key, &self.grid, i);
        self.advances[i] += 1;
        Ok(track.omega[i + 1][n - 1])
    }

    /// `ω_{T_j}` for grid index `j`, folding single-interval advances from
    /// the first interval whose cached values are missing or stale.
    pub fn omega_at(&mut self, key: &OperatorKey<T>, j: usize) -> Result<T> {
        self.check_key(key)?;
        if j > self.grid.len() {
            return Err(Error::Range(format!("grid index {j} outside [0, {}]", self.grid.len())));
        }
        if j == 0 {
            return Ok(T::zero());
        }
        let n = key.depth();
        let committed = self.committed;
        let track = self.tracks.entry(key.label.clone()).or_insert_with(|| Track::new(n));
        let mut start = track.len();
        if let Some(f) = track.first_mismatch(key) {
            if f < committed {
                return Err(Error::State(format!(
                    "key {} differs from committed values on interval {f}",
                    key.label
                )));
            }
            start = f;
        }
        if start >= j {
            return Ok(track.omega[j][n - 1]);
        }
        track.truncate(start);
        for i in start..j {
            advance_track(track, key, &self.grid, i);
            self.advances[i] += 1;
        }
        Ok(track.omega[j][n - 1])
    }

    /// `ω` at the grid horizon.
    pub fn omega_horizon(&mut self, key: &OperatorKey<T>) -> Result<T> {
        let n = self.grid.len();
        self.omega_at(key, n)
    }

    /// Freeze every cached value up to grid index `j`.
    pub fn commit(&mut self, j: usize) -> Result<()> {
        if j > self.grid.len() {
            return Err(Error::Range(format!("grid index {j} outside [0, {}]", self.grid.len())));
        }
        if j < self.committed {
            return Err(Error::State(format!("cannot commit {j} behind checkpoint {}", self.committed)));
        }
        self.committed = j;
        Ok(())
    }

    /// Discard all scratch work past the last commit.
    pub fn rollback(&mut self) {
        let c = self.committed;
        for tr in self.tracks.values_mut() {
            if tr.len() > c {
                tr.truncate(c);
            }
        }
    }

    /// Discard scratch work past grid index `j ≥ committed`.
    pub fn rollback_to(&mut self, j: usize) -> Result<()> {
        if j < self.committed {
            return Err(Error::State(format!("rollback to {j} crosses checkpoint {}", self.committed)));
        }
        for tr in self.tracks.values_mut() {
            if tr.len() > j {
                tr.truncate(j);
            }
        }
        Ok(())
    }

    /// Committed part of the cache as JSON.
    pub fn snapshot(&self) -> String {
        let c = self.committed;
        let f = |v: &[T]| v.iter().map(|x| x.f64()).collect::<Vec<f64>>();
        let tracks = self
            .tracks
            .iter()
            .map(|(label, tr)| {
                let upto = tr.len().min(c);
                let snap = TrackSnapshot {
                    depth: tr.depth,
                    omega: tr.omega[..=upto].iter().map(|v| f(v)).collect(),
                    cum_k: tr.cum_k[..=upto].iter().map(|v| f(v)).collect(),
                    used: tr.used[..upto]
                        .iter()
                        .map(|v| v.iter().map(|&(k, l)| [k.f64(), l.f64()]).collect())
                        .collect(),
                };
                (label.clone(), snap)
            })
            .collect();
        let snap = StateSnapshot {
            version: SNAPSHOT_VERSION,
            grid: f(self.grid.times()),
            committed: c,
            tracks,
        };
        serde_json::to_string(&snap).expect("plain data serializes")
    }

    /// Rebuild a state from [`snapshot`](Self::snapshot) output.
    pub fn restore(json: &str) -> Result<Self> {
        let snap: StateSnapshot =
            serde_json::from_str(json).map_err(|e| Error::Config(format!("checkpoint JSON: {e}")))?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", snap.version)));
        }
        let grid = MaturityGrid::new(snap.grid.iter().map(|&x| T::of(x)).collect())?;
        if snap.committed > grid.len() {
            return Err(Error::Config("checkpoint index past grid horizon".into()));
        }
        let t = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
        let mut tracks = BTreeMap::new();
        for (label, s) in snap.tracks {
            let len = s.used.len();
            let consistent = s.depth >= 1
                && s.depth <= MAX_DEPTH
                && s.omega.len() == len + 1
                && s.cum_k.len() == len + 1
                && len <= snap.committed
                && s.omega.iter().chain(&s.cum_k).all(|v| v.len() == s.depth)
                && s.used.iter().all(|v| v.len() == s.depth);
            if !consistent {
                return Err(Error::Config(format!("malformed checkpoint track {label}")));
            }
            tracks.insert(
                label,
                Track {
                    depth: s.depth,
                    omega: s.omega.iter().map(|v| t(v)).collect(),
                    cum_k: s.cum_k.iter().map(|v| t(v)).collect(),
                    used: s.used.iter().map(|v| v.iter().map(|p| (T::of(p[0]), T::of(p[1]))).collect()).collect(),
                },
            );
        }
        let n = grid.len();
        Ok(Self { grid, tracks, committed: snap.committed, advances: vec![0; n] })
    }
}

const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StateSnapshot {
    version: u32,
    grid: Vec<f64>,
    committed: usize,
    tracks: BTreeMap<String, TrackSnapshot>,
}

#[derive(Serialize, Deserialize)]
struct TrackSnapshot {
    depth: usize,
    omega: Vec<Vec<f64>>,
    cum_k: Vec<Vec<f64>>,
    used: Vec<Vec<[f64; 2]>>,
}

/// One step of the grid recursion:
/// `ω_{T_{i+1}}^{(D)} = Σ_{m=1}^{D+1} ω_{T_i}^{(D−m+1)} · Π l_i · e_{T_i} · φ_{T_i,T_{i+1}}`
/// where the product, `e` and `φ` range over the outer `m − 1` levels of the
/// depth-`D` suffix and empty factors equal one.
fn advance_track<T: Scalar>(track: &mut Track<T>, key: &OperatorKey<T>, grid: &MaturityGrid<T>, i: usize) {
    let n = track.depth;
    let dt = grid.dt(i);
    let levels = key.levels_at(i);
    let cum = track.cum_k[i].clone();
    let prev = track.omega[i].clone();
    let scaled: Vec<Level<T>> = levels.iter().map(|&(k, _)| Level { a: k * dt, p: 0 }).collect();
    let mut phi = Phi::new(T::one());
    let mut next = vec![T::zero(); n];
    for d in 1..=n {
        let o = n - d;
        let mut acc = prev[d - 1];
        let mut lprod = T::one();
        let mut ksum = T::zero();
        for m in 2..=d + 1 {
            let outer = o + m - 2;
            lprod *= levels[outer].1;
            ksum += cum[outer];
            if lprod == T::zero() {
                break;
            }
            let inner = if m - 1 == d { T::one() } else { prev[d - m] };
            let f = dt.powi((m - 1) as i32) * phi.eval(&scaled[o..=outer]);
            acc += inner * lprod * ksum.exp() * f;
        }
        next[d - 1] = acc;
    }
    let cum_next: Vec<T> = cum.iter().zip(&levels).map(|(&c, &(k, _))| c + k * dt).collect();
    track.omega.push(next);
    track.cum_k.push(cum_next);
    track.used.push(levels);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(times: &[f64]) -> MaturityGrid<f64> {
        MaturityGrid::new(times.to_vec()).unwrap()
    }

    #[test]
    fn single_level_examples() {
        let g = grid(&[0.0, 0.7]);
        let mut st = OperatorState::new(g.clone());
        let key = OperatorKey::constant(&g, &[(0.0, 1.0)]).unwrap();
        assert_eq!(st.omega_at(&key, 0).unwrap(), 0.0);
        assert!((st.omega_at(&key, 1).unwrap() - 0.7).abs() < 1e-15);
        let (k, c) = (-2.5, 1.3);
        let key = OperatorKey::constant(&g, &[(k, c)]).unwrap();
        let v = st.omega_advance(&key, 0).unwrap();
        assert!((v - c * ((k * 0.7f64).exp() - 1.0) / k).abs() < 1e-14);
    }

    #[test]
    fn e_factor_examples() {
        let g = grid(&[0.0, 0.3, 0.5, 1.0]);
        let st = OperatorState::new(g.clone());
        let k1 = PiecewiseCurve::new(g.clone(), vec![1.0, -2.0, 0.5]).unwrap();
        let k2 = PiecewiseCurve::new(g.clone(), vec![0.3, 0.1, -0.7]).unwrap();
        assert_eq!(st.e_factor(0.0, &[&k1, &k2]).unwrap(), 1.0);
        let zero = PiecewiseCurve::constant(g.clone(), 0.0);
        assert_eq!(st.e_factor(0.8, &[&zero]).unwrap(), 1.0);
        let sum = k1.integrate(0.0, 1.0).unwrap() + k2.integrate(0.0, 1.0).unwrap();
        assert!((st.e_factor(1.0, &[&k1, &k2]).unwrap() - sum.exp()).abs() < 1e-14);
        assert!(st.e_factor(1.5, &[&k1]).is_err());
    }

    #[test]
    fn phi_through_state() {
        let g = grid(&[0.0, 0.25, 1.0]);
        let st = OperatorState::new(g.clone());
        let k = PiecewiseCurve::new(g, vec![0.0, 3.0]).unwrap();
        assert!((st.phi(0, 0.25, &[(&k, 0)]).unwrap() - 0.25).abs() < 1e-16);
        let v = st.phi(1, 1.0, &[(&k, 0)]).unwrap();
        assert!((v - ((3.0f64 * 0.75).exp() - 1.0) / 3.0).abs() < 1e-14);
        assert!(st.phi(1, 0.25, &[(&k, 0)]).is_err());
    }

    #[test]
    fn stepwise_equals_one_pass() {
        let g = grid(&[0.0, 0.1, 0.4, 0.45, 1.0]);
        let c = |v: [f64; 4]| PiecewiseCurve::new(g.clone(), v.to_vec()).unwrap();
        let key = OperatorKey::new(
            "k",
            vec![
                (c([-3.0, 1.0, 0.0, 2.0]), c([1.0, 0.5, -2.0, 1.0])),
                (c([3.0, -1.0, 4.0, -2.0]), c([0.2, 0.2, 0.3, 0.1])),
                (c([0.5, 0.5, 0.5, 0.5]), c([1.0, 2.0, 3.0, 4.0])),
            ],
        )
        .unwrap();
        let mut a = OperatorState::new(g.clone());
        let mut last = 0.0;
        for i in 0..4 {
            last = a.omega_advance(&key, i).unwrap();
        }
        let mut b = OperatorState::new(g.clone());
        assert_eq!(b.omega_at(&key, 4).unwrap().to_bits(), last.to_bits());
        // Idempotent: no further work on a repeat call.
        let before = b.advance_counts().to_vec();
        b.omega_at(&key, 4).unwrap();
        assert_eq!(b.advance_counts(), &before[..]);
    }

    #[test]
    fn missing_prerequisite_is_a_state_error() {
        let g = grid(&[0.0, 0.5, 1.0]);
        let key = OperatorKey::constant(&g, &[(1.0, 1.0)]).unwrap();
        let mut st = OperatorState::new(g);
        assert!(matches!(st.omega_advance(&key, 1), Err(Error::State(_))));
    }

    #[test]
    fn commit_and_rollback() {
        let g = grid(&[0.0, 0.5, 1.0]);
        let c = |a: f64, b: f64| PiecewiseCurve::new(g.clone(), vec![a, b]).unwrap();
        let key1 = OperatorKey::new("x", vec![(c(-1.0, -1.0), c(1.0, 1.0)), (c(1.0, 1.0), c(2.0, 2.0))]).unwrap();
        let mut st = OperatorState::new(g.clone());
        let v1 = st.omega_at(&key1, 1).unwrap();
        st.commit(1).unwrap();
        // Changing the frontier interval re-integrates only that interval.
        let key2 = OperatorKey::new("x", vec![(c(-1.0, -3.0), c(1.0, 1.0)), (c(1.0, 2.0), c(2.0, 5.0))]).unwrap();
        st.omega_at(&key1, 2).unwrap();
        st.omega_at(&key2, 2).unwrap();
        assert_eq!(st.advance_counts(), &[1, 2]);
        // Changing a committed interval is refused.
        let key3 = OperatorKey::new("x", vec![(c(-2.0, -3.0), c(1.0, 1.0)), (c(1.0, 2.0), c(2.0, 5.0))]).unwrap();
        assert!(matches!(st.omega_at(&key3, 2), Err(Error::State(_))));
        st.rollback();
        assert_eq!(st.omega_at(&key1, 1).unwrap().to_bits(), v1.to_bits());
        assert!(st.rollback_to(0).is_err());
        assert!(st.commit(0).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let g = grid(&[0.0, 0.5, 1.0]);
        let key = OperatorKey::constant(&g, &[(-5.0, 1.0), (5.0, 0.1)]).unwrap();
        let mut st = OperatorState::new(g.clone());
        st.omega_at(&key, 2).unwrap();
        st.commit(1).unwrap();
        let json = st.snapshot();
        let mut back = OperatorState::<f64>::restore(&json).unwrap();
        assert_eq!(back.committed(), 1);
        let mut fresh = OperatorState::new(g);
        assert_eq!(back.omega_at(&key, 2).unwrap(), fresh.omega_at(&key, 2).unwrap());
        assert_eq!(back.advance_counts(), &[0, 1]);
        assert!(OperatorState::<f64>::restore("{\"version\":9}").is_err());
    }

    #[test]
    fn refinement_invariance() {
        let g = grid(&[0.0, 0.5, 1.0]);
        let fine = g.refine(&[0.2, 0.75]).unwrap();
        let c = |a: f64, b: f64| PiecewiseCurve::new(g.clone(), vec![a, b]).unwrap();
        let pairs = vec![(c(-4.0, 2.0), c(1.0, 0.5)), (c(4.0, -1.0), c(0.3, 0.4)), (c(0.0, 1.0), c(1.0, 1.0))];
        let coarse = OperatorKey::anonymous(pairs.clone()).unwrap();
        let refined = OperatorKey::anonymous(
            pairs.iter().map(|(k, l)| (k.resample(&fine).unwrap(), l.resample(&fine).unwrap())).collect(),
        )
        .unwrap();
        let a = OperatorState::new(g).omega_horizon(&coarse).unwrap();
        let b = OperatorState::new(fine).omega_horizon(&refined).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn works_in_f32() {
        let g = MaturityGrid::<f32>::new(vec![0.0, 0.5, 1.0]).unwrap();
        let key = OperatorKey::constant(&g, &[(-1.0f32, 1.0), (1.0, 1.0)]).unwrap();
        let v = OperatorState::new(g).omega_horizon(&key).unwrap();
        // ∫_0^1 e^{-u} (e^{u} − 1) du = 1 − (1 − e^{-1})
        assert!((v - (-1.0f32).exp()).abs() < 1e-5);
    }
}
