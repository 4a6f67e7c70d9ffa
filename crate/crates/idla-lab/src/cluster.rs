//! Internal DLA cluster growth in discrete or continuous (Poisson) time,
//! with the full absorption history exposed.
//!
//! Sites are packed into a `u64` with 21 bits per signed axis, and the
//! occupied set is an open-addressing table keyed by the packed value:
//! membership is the inner-loop cost of the whole simulation.

use crate::error::{Error, Result};
use crate::sandpile::SandpileField;
use crate::util::{radius_for_volume, splitmix64};
use crate::walk::{PoissonClock, WalkRng, STEP_CAP};

pub const COORD_BITS: u32 = 21;
const COORD_OFFSET: i64 = 1 << (COORD_BITS - 1);
const COORD_MASK: u64 = (1 << COORD_BITS) - 1;

/// Pack up to three signed coordinates into one word.
#[inline]
pub fn pack(coords: &[i64]) -> u64 {
    debug_assert!(coords.len() <= 3);
    let mut out = 0u64;
    for (i, &c) in coords.iter().enumerate() {
        debug_assert!(c.unsigned_abs() < (COORD_OFFSET as u64));
        out |= (((c + COORD_OFFSET) as u64) & COORD_MASK) << (COORD_BITS * i as u32);
    }
    out
}

#[inline]
pub fn unpack(packed: u64, d: usize) -> [i64; 3] {
    let mut out = [0i64; 3];
    for (i, slot) in out.iter_mut().enumerate().take(d) {
        *slot = ((packed >> (COORD_BITS * i as u32)) & COORD_MASK) as i64 - COORD_OFFSET;
    }
    out
}

/// Squared Euclidean norm of a packed site.
#[inline]
pub fn norm_sq(packed: u64, d: usize) -> i64 {
    let c = unpack(packed, d);
    c[..d].iter().map(|v| v * v).sum()
}

/// Open-addressing hash map from packed coordinates to a `u32` payload
/// (absorption index).  Linear probing, power-of-two capacity.
#[derive(Debug, Clone)]
pub struct CoordMap {
    keys: Vec<u64>,
    vals: Vec<u32>,
    mask: usize,
    len: usize,
}

const EMPTY_KEY: u64 = u64::MAX;

impl CoordMap {
    pub fn with_capacity(expected: usize) -> Self {
        let cap = (expected * 2).next_power_of_two().max(16);
        Self {
            keys: vec![EMPTY_KEY; cap],
            vals: vec![0; cap],
            mask: cap - 1,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    fn slot(&self, key: u64) -> usize {
        let mut i = (splitmix64(key) as usize) & self.mask;
        loop {
            let k = self.keys[i];
            if k == key || k == EMPTY_KEY {
                return i;
            }
            i = (i + 1) & self.mask;
        }
    }

    #[inline]
    pub fn contains(&self, key: u64) -> bool {
        self.keys[self.slot(key)] == key
    }

    #[inline]
    pub fn get(&self, key: u64) -> Option<u32> {
        let i = self.slot(key);
        if self.keys[i] == key {
            Some(self.vals[i])
        } else {
            None
        }
    }

    /// Insert if absent; returns whether the key was new.
    pub fn insert(&mut self, key: u64, val: u32) -> bool {
        if self.len * 10 >= self.keys.len() * 7 {
            self.grow_table();
        }
        let i = self.slot(key);
        if self.keys[i] == key {
            return false;
        }
        self.keys[i] = key;
        self.vals[i] = val;
        self.len += 1;
        true
    }

    fn grow_table(&mut self) {
        let new_cap = self.keys.len() * 2;
        let old_keys = std::mem::replace(&mut self.keys, vec![EMPTY_KEY; new_cap]);
        let old_vals = std::mem::replace(&mut self.vals, vec![0; new_cap]);
        self.mask = new_cap - 1;
        self.len = 0;
        for (k, v) in old_keys.into_iter().zip(old_vals) {
            if k != EMPTY_KEY {
                self.insert(k, v);
            }
        }
    }
}

/// How the cluster is driven: a fixed particle count or a Poisson clock
/// run to time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthMode {
    Discrete(u64),
    Poisson(f64),
}

/// Full growth record: absorption order, site index, and (in Poisson
/// mode) the arrival time of the particle that settled at each site.
#[derive(Debug, Clone)]
pub struct ClusterHistory {
    pub d: usize,
    pub seed: u64,
    pub stream: u64,
    pub poisson: bool,
    /// Clock horizon in Poisson mode; particle count in discrete mode.
    pub t_max: f64,
    /// Sites in absorption order (packed coordinates).
    sites: Vec<u64>,
    index: CoordMap,
    /// Arrival times aligned with `sites` (Poisson mode only).
    arrivals: Option<Vec<f64>>,
}

impl ClusterHistory {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[u64] {
        &self.sites
    }

    pub fn arrivals(&self) -> Option<&[f64]> {
        self.arrivals.as_deref()
    }

    pub fn contains(&self, packed: u64) -> bool {
        self.index.contains(packed)
    }

    /// Zero-based absorption index of a site.
    pub fn order_index(&self, packed: u64) -> Option<u32> {
        self.index.get(packed)
    }

    /// `F_0(x)`: one-based absorption order.
    pub fn f0(&self, packed: u64) -> Option<u64> {
        self.order_index(packed).map(|i| i as u64 + 1)
    }

    /// `F(x)`: arrival time of the settling particle (Poisson mode).
    pub fn arrival_of(&self, packed: u64) -> Option<f64> {
        let arr = self.arrivals.as_ref()?;
        self.order_index(packed).map(|i| arr[i as usize])
    }

    /// Number of sites absorbed by clock time `t` (Poisson mode); in
    /// discrete mode, `t` truncated to the particle count.
    pub fn count_at(&self, t: f64) -> usize {
        match &self.arrivals {
            Some(arr) => arr.partition_point(|&a| a <= t),
            None => (t.floor().max(0.0) as usize).min(self.sites.len()),
        }
    }

    /// Checks that every lattice site with `|x| <= radius` is absorbed.
    pub fn covers_radius(&self, radius: f64) -> bool {
        ball_is_covered(self.d, radius, |site| self.contains(site))
    }

    /// Largest site norm in the cluster.
    pub fn max_radius(&self) -> f64 {
        self.sites
            .iter()
            .map(|&s| norm_sq(s, self.d) as f64)
            .fold(0.0, f64::max)
            .sqrt()
    }
}

/// Per-step hooks used by growth-coupled observables (quadratic
/// variation).  The default implementations are no-ops and compile away.
pub trait GrowthObserver {
    #[inline]
    fn on_particle_start(&mut self) {}
    #[inline]
    fn on_step(&mut self, _from: u64, _to: u64) {}
    #[inline]
    fn on_absorb(&mut self, _site: u64, _index: u64, _time: Option<f64>) {}
}

pub struct NoopObserver;
impl GrowthObserver for NoopObserver {}

struct Grower {
    d: usize,
    rng: WalkRng,
    occupied: CoordMap,
    sites: Vec<u64>,
    deltas: [i64; 6],
    origin: u64,
}

impl Grower {
    fn new(d: usize, seed: u64, stream: u64, expected: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::UnsupportedDimension(d));
        }
        let mut deltas = [0i64; 6];
        for axis in 0..d {
            let step = 1i64 << (COORD_BITS * axis as u32);
            deltas[2 * axis] = step;
            deltas[2 * axis + 1] = -step;
        }
        Ok(Self {
            d,
            rng: WalkRng::new(seed, stream),
            occupied: CoordMap::with_capacity(expected.max(64)),
            sites: Vec::with_capacity(expected),
            deltas,
            origin: pack(&vec![0i64; d]),
        })
    }

    /// Release one particle from the origin; record the first site it
    /// visits outside the current cluster.
    fn release<O: GrowthObserver>(&mut self, obs: &mut O) -> Result<u64> {
        obs.on_particle_start();
        let mut pos = self.origin;
        let mut steps = 0u64;
        while self.occupied.contains(pos) {
            let dir = self.rng.direction(self.d);
            let next = (pos as i64 + self.deltas[dir as usize]) as u64;
            obs.on_step(pos, next);
            pos = next;
            steps += 1;
            if steps > STEP_CAP {
                return Err(Error::StepCapExceeded { cap: STEP_CAP });
            }
        }
        let idx = self.sites.len() as u32;
        self.occupied.insert(pos, idx);
        self.sites.push(pos);
        Ok(pos)
    }
}

/// Grow a cluster, reporting every walk step to the observer.
pub fn grow_with_observer<O: GrowthObserver>(
    d: usize,
    mode: GrowthMode,
    seed: u64,
    stream: u64,
    obs: &mut O,
) -> Result<ClusterHistory> {
    match mode {
        GrowthMode::Discrete(n) => {
            let mut g = Grower::new(d, seed, stream, n as usize)?;
            for s in 0..n {
                let site = g.release(obs)?;
                obs.on_absorb(site, s, None);
            }
            finish(g, false, n as f64, None, seed, stream)
        }
        GrowthMode::Poisson(t) => {
            if t < 0.0 {
                return Err(Error::NegativeTime(t));
            }
            let mut g = Grower::new(d, seed, stream, t as usize + 64)?;
            let clock = PoissonClock::sample(t, &mut g.rng)?;
            let arrivals = clock.arrivals;
            for (s, &tau) in arrivals.iter().enumerate() {
                let site = g.release(obs)?;
                obs.on_absorb(site, s as u64, Some(tau));
            }
            finish(g, true, t, Some(arrivals), seed, stream)
        }
    }
}

fn finish(
    g: Grower,
    poisson: bool,
    t_max: f64,
    arrivals: Option<Vec<f64>>,
    seed: u64,
    stream: u64,
) -> Result<ClusterHistory> {
    Ok(ClusterHistory {
        d: g.d,
        seed,
        stream,
        poisson,
        t_max,
        sites: g.sites,
        index: g.occupied,
        arrivals,
    })
}

/// Grow a cluster in discrete or Poisson time.
pub fn grow(d: usize, mode: GrowthMode, seed: u64, stream: u64) -> Result<ClusterHistory> {
    grow_with_observer(d, mode, seed, stream, &mut NoopObserver)
}

/// Reassemble a history from stored parts (snapshot loading and tests).
pub(crate) fn history_from_parts(
    d: usize,
    seed: u64,
    stream: u64,
    t_max: f64,
    sites: Vec<u64>,
    arrivals: Option<Vec<f64>>,
) -> ClusterHistory {
    let mut index = CoordMap::with_capacity(sites.len());
    for (i, &s) in sites.iter().enumerate() {
        index.insert(s, i as u32);
    }
    let poisson = arrivals.is_some();
    ClusterHistory {
        d,
        seed,
        stream,
        poisson,
        t_max,
        sites,
        index,
        arrivals,
    }
}

#[cfg(test)]
pub(crate) fn test_history(
    d: usize,
    sites: Vec<u64>,
    index: CoordMap,
    arrivals: Option<Vec<f64>>,
    t_max: f64,
) -> ClusterHistory {
    let poisson = arrivals.is_some();
    ClusterHistory {
        d,
        seed: 0,
        stream: 0,
        poisson,
        t_max,
        sites,
        index,
        arrivals,
    }
}

fn ball_is_covered(d: usize, radius: f64, contains: impl Fn(u64) -> bool) -> bool {
    let r = radius.floor() as i64;
    let r2 = (radius * radius).floor() as i64;
    match d {
        1 => (-r..=r).all(|x| contains(pack(&[x]))),
        2 => {
            for x in -r..=r {
                for y in -r..=r {
                    if x * x + y * y <= r2 && !contains(pack(&[x, y])) {
                        return false;
                    }
                }
            }
            true
        }
        3 => {
            for x in -r..=r {
                for y in -r..=r {
                    for z in -r..=r {
                        if x * x + y * y + z * z <= r2 && !contains(pack(&[x, y, z])) {
                            return false;
                        }
                    }
                }
            }
            true
        }
        _ => false,
    }
}

/// Discrete-time growth continued until every lattice site with
/// `|x| <= radius` has been absorbed.
pub fn grow_until_radius_covered(
    d: usize,
    radius: f64,
    seed: u64,
    stream: u64,
) -> Result<ClusterHistory> {
    let volume = crate::util::unit_ball_volume(d) * (radius + 3.0).powi(d as i32);
    let mut g = Grower::new(d, seed, stream, volume as usize)?;
    let mut obs = NoopObserver;
    let mut target = volume.ceil() as u64;
    loop {
        while (g.sites.len() as u64) < target {
            let site = g.release(&mut obs)?;
            let s = g.sites.len() as u64 - 1;
            obs.on_absorb(site, s, None);
        }
        if ball_is_covered(d, radius, |site| g.occupied.contains(site)) {
            let n = g.sites.len() as f64;
            return finish(g, false, n, None, seed, stream);
        }
        target += (target / 100).max(500);
    }
}

/// The lateness values of all absorbed sites in a two-dimensional
/// history: `L(x) = sqrt(F(x)/pi) - |x|` with `F` the Poisson arrival
/// time, or `L_0` with the absorption order in discrete mode.
#[derive(Debug, Clone)]
pub struct LatenessField {
    pub poisson: bool,
    /// `(site, L)` in absorption order.
    pub entries: Vec<(u64, f64)>,
    index: CoordMap,
}

impl LatenessField {
    pub fn get(&self, packed: u64) -> Option<f64> {
        self.index.get(packed).map(|i| self.entries[i as usize].1)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|e| e.1.abs()).fold(0.0, f64::max)
    }
}

/// Compute the lateness field of a `d = 2` history.
pub fn lateness(history: &ClusterHistory) -> Result<LatenessField> {
    if history.d != 2 {
        return Err(Error::UnsupportedDimension(history.d));
    }
    let mut entries = Vec::with_capacity(history.len());
    let mut index = CoordMap::with_capacity(history.len());
    for (i, &site) in history.sites().iter().enumerate() {
        let f = match history.arrivals() {
            Some(arr) => arr[i],
            None => (i + 1) as f64,
        };
        let norm = (norm_sq(site, 2) as f64).sqrt();
        let l = (f / std::f64::consts::PI).sqrt() - norm;
        index.insert(site, i as u32);
        entries.push((site, l));
    }
    Ok(LatenessField {
        poisson: history.poisson,
        entries,
        index,
    })
}

/// Reference shape for the signed discrepancy field.
pub enum DiscrepancyReference<'a> {
    /// The lattice ball of volume `t`.
    LatticeBall,
    /// A divisible sandpile relaxed with total mass `t`.
    Sandpile(&'a SandpileField),
}

/// The raw signed weights `1_{x in A} - ref(x)` of the discrepancy field
/// at clock time `t` (scaling by `r^{-d/2}` happens when pairing with a
/// test function).  Weights of exactly zero are dropped.
pub fn signed_discrepancy(
    history: &ClusterHistory,
    t: f64,
    reference: DiscrepancyReference<'_>,
) -> Result<Vec<(u64, f64)>> {
    let d = history.d;
    let have = if history.poisson {
        history.t_max
    } else {
        history.len() as f64
    };
    if t > have {
        return Err(Error::InsufficientHistory { needed: t, have });
    }
    let count = history.count_at(t);
    let active = &history.sites()[..count];
    let in_active = |site: u64| history.order_index(site).is_some_and(|i| (i as usize) < count);

    let mut weights = Vec::new();
    match reference {
        DiscrepancyReference::LatticeBall => {
            let r = radius_for_volume(t, d);
            let r2 = r * r;
            let in_ball = |site: u64| (norm_sq(site, d) as f64) <= r2;
            for &site in active {
                if !in_ball(site) {
                    weights.push((site, 1.0));
                }
            }
            let rc = r.floor() as i64;
            let mut visit = |coords: &[i64]| {
                let site = pack(coords);
                if !in_active(site) {
                    weights.push((site, -1.0));
                }
            };
            match d {
                1 => {
                    for x in -rc..=rc {
                        if (x * x) as f64 <= r2 {
                            visit(&[x]);
                        }
                    }
                }
                2 => {
                    for x in -rc..=rc {
                        for y in -rc..=rc {
                            if ((x * x + y * y) as f64) <= r2 {
                                visit(&[x, y]);
                            }
                        }
                    }
                }
                3 => {
                    for x in -rc..=rc {
                        for y in -rc..=rc {
                            for z in -rc..=rc {
                                if ((x * x + y * y + z * z) as f64) <= r2 {
                                    visit(&[x, y, z]);
                                }
                            }
                        }
                    }
                }
                _ => return Err(Error::UnsupportedDimension(d)),
            }
        }
        DiscrepancyReference::Sandpile(field) => {
            if (field.t - t).abs() > 1e-9 * t.max(1.0) {
                return Err(Error::MismatchedTime {
                    reference: field.t,
                    requested: t,
                });
            }
            if field.d != d {
                return Err(Error::UnsupportedDimension(field.d));
            }
            for &site in active {
                let coords = unpack(site, d);
                let w = 1.0 - field.mass_at(&coords[..d]);
                if w != 0.0 {
                    weights.push((site, w));
                }
            }
            for (coords, mass) in field.support_sites() {
                let site = pack(&coords[..d]);
                if !in_active(site) && mass != 0.0 {
                    weights.push((site, -mass));
                }
            }
        }
    }
    Ok(weights)
}
