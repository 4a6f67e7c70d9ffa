//! Divisible sandpile occupation function `w_t` and odometer on `Z^d`.
//!
//! The relaxation runs on the quotient of the lattice by its symmetry
//! group (coordinate permutations and sign flips): one stored cell per
//! orbit.  Toppling whole orbits at once is a valid toppling order, so
//! the fixed point is the usual one, and the symmetry
//! `w(sigma x) = w(x)` holds exactly by construction.

use crate::error::{Error, Result};
use crate::poly::{ComplexPairPolynomial, ExactPolynomial};
use crate::util::{radius_for_volume, Kahan};

/// Relaxed sandpile state: per-site mass in `[0, 1]` plus the odometer.
///
/// The odometer here is the mass each site emitted *per neighbor*
/// (total emitted divided by `2d`), the unit that makes the sharp
/// one-dimensional solution `u(0) = 1` at `t = 3`.
#[derive(Debug, Clone)]
pub struct SandpileField {
    pub d: usize,
    pub t: f64,
    pub tol: f64,
    /// Residual: largest per-site excess at termination.
    pub residual: f64,
    radius_cap: i64,
    mass: Vec<f64>,
    odometer: Vec<f64>,
    orbit_sizes: Vec<f64>,
}

fn tri(n: i64) -> i64 {
    n * (n + 1) / 2
}

fn tet(n: i64) -> i64 {
    n * (n + 1) * (n + 2) / 6
}

/// Canonical orbit representative: absolute values sorted descending.
fn canon(coords: &mut [i64]) {
    for c in coords.iter_mut() {
        *c = c.abs();
    }
    coords.sort_unstable_by(|a, b| b.cmp(a));
}

fn wedge_index(c: &[i64]) -> usize {
    match c.len() {
        1 => c[0] as usize,
        2 => (tri(c[0]) + c[1]) as usize,
        3 => (tet(c[0]) + tri(c[1]) + c[2]) as usize,
        _ => unreachable!(),
    }
}

fn wedge_size(d: usize, radius_cap: i64) -> usize {
    match d {
        1 => radius_cap as usize + 1,
        2 => tri(radius_cap + 1) as usize,
        3 => tet(radius_cap + 1) as usize,
        _ => unreachable!(),
    }
}

/// Number of lattice sites in the orbit of a canonical representative:
/// sign flips of the nonzero coordinates times distinct permutations.
fn orbit_size(c: &[i64]) -> f64 {
    let nonzero = c.iter().filter(|&&v| v != 0).count() as u32;
    let mut perms = 1.0;
    for k in 1..=c.len() {
        perms *= k as f64;
    }
    let mut run = 1usize;
    for i in 1..c.len() {
        if c[i] == c[i - 1] {
            run += 1;
            let mut f = 1.0;
            for k in 1..=run {
                f *= k as f64;
            }
            if i == c.len() - 1 || c[i + 1] != c[i] {
                perms /= f;
                run = 1;
            }
        } else {
            run = 1;
        }
    }
    (1u64 << nonzero) as f64 * perms
}

/// Enumerate the full orbit of a canonical representative.
fn orbit_members(c: &[i64]) -> Vec<Vec<i64>> {
    let d = c.len();
    let mut perms: Vec<Vec<i64>> = Vec::new();
    let mut idx: Vec<usize> = (0..d).collect();
    // Heap's algorithm unrolled for d <= 3.
    let all_perms: Vec<Vec<usize>> = match d {
        1 => vec![vec![0]],
        2 => vec![vec![0, 1], vec![1, 0]],
        3 => vec![
            vec![0, 1, 2],
            vec![0, 2, 1],
            vec![1, 0, 2],
            vec![1, 2, 0],
            vec![2, 0, 1],
            vec![2, 1, 0],
        ],
        _ => unreachable!(),
    };
    idx.clear();
    for p in all_perms {
        let candidate: Vec<i64> = p.iter().map(|&i| c[i]).collect();
        if !perms.contains(&candidate) {
            perms.push(candidate);
        }
    }
    let mut out = Vec::new();
    for base in perms {
        let nz: Vec<usize> = (0..d).filter(|&i| base[i] != 0).collect();
        for bits in 0..(1u32 << nz.len()) {
            let mut member = base.clone();
            for (b, &i) in nz.iter().enumerate() {
                if bits >> b & 1 == 1 {
                    member[i] = -member[i];
                }
            }
            out.push(member);
        }
    }
    out
}

impl SandpileField {
    /// Mass `w(x)` at an arbitrary lattice site (zero outside support).
    pub fn mass_at(&self, coords: &[i64]) -> f64 {
        let mut c = coords.to_vec();
        canon(&mut c);
        if c[0] > self.radius_cap {
            return 0.0;
        }
        self.mass[wedge_index(&c)]
    }

    /// Odometer `u(x)` (mass emitted per neighbor).
    pub fn odometer_at(&self, coords: &[i64]) -> f64 {
        let mut c = coords.to_vec();
        canon(&mut c);
        if c[0] > self.radius_cap {
            return 0.0;
        }
        self.odometer[wedge_index(&c)]
    }

    /// Total mass over the lattice.
    pub fn total_mass(&self) -> f64 {
        let mut acc = Kahan::new();
        for (w, o) in self.mass.iter().zip(&self.orbit_sizes) {
            if *w != 0.0 {
                acc.add(w * o);
            }
        }
        acc.value()
    }

    /// All lattice sites with positive mass, orbit-expanded.
    pub fn support_sites(&self) -> Vec<([i64; 3], f64)> {
        let mut out = Vec::new();
        self.for_each_canonical(|c, w, _| {
            if w > 0.0 {
                for member in orbit_members(c) {
                    let mut arr = [0i64; 3];
                    arr[..c.len()].copy_from_slice(&member);
                    out.push((arr, w));
                }
            }
        });
        out.sort_unstable_by_key(|(c, _)| *c);
        out
    }

    fn for_each_canonical(&self, mut f: impl FnMut(&[i64], f64, f64)) {
        let d = self.d;
        let rc = self.radius_cap;
        let mut visit = |c: &[i64]| {
            let i = wedge_index(c);
            f(c, self.mass[i], self.odometer[i]);
        };
        match d {
            1 => (0..=rc).for_each(|a| visit(&[a])),
            2 => {
                for a in 0..=rc {
                    for b in 0..=a {
                        visit(&[a, b]);
                    }
                }
            }
            3 => {
                for a in 0..=rc {
                    for b in 0..=a {
                        for c3 in 0..=b {
                            visit(&[a, b, c3]);
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
    }

    /// (inner radius, outer radius, annulus width): inner is the smallest
    /// norm of a not-fully-occupied site, outer the smallest lattice norm
    /// strictly beyond every site that carries mass.
    pub fn shape_report(&self) -> ShapeReport {
        let mut inner = f64::INFINITY;
        let mut max_pos: f64 = -1.0;
        let mut radii: Vec<f64> = Vec::new();
        self.for_each_canonical(|c, w, _| {
            let norm = (c.iter().map(|v| v * v).sum::<i64>() as f64).sqrt();
            radii.push(norm);
            if w < 1.0 {
                inner = inner.min(norm);
            }
            if w > 0.0 {
                max_pos = max_pos.max(norm);
            }
        });
        if !inner.is_finite() {
            inner = 0.0;
        }
        let next_radius = radii
            .iter()
            .copied()
            .filter(|&r| r > max_pos)
            .fold(f64::INFINITY, f64::min);
        let outer = if max_pos < 0.0 {
            0.0
        } else if next_radius.is_finite() {
            next_radius
        } else {
            max_pos
        };
        ShapeReport {
            inner,
            outer,
            width: outer - inner,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeReport {
    pub inner: f64,
    pub outer: f64,
    pub width: f64,
}

/// Relax `t` units of mass at the origin by iterative toppling: any site
/// with mass above one keeps one and sends the excess in equal shares to
/// its `2d` neighbors, accumulating the odometer, until the largest
/// remaining excess drops below `tol`.
pub fn relax(t: f64, d: usize, tol: f64) -> Result<SandpileField> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    if !(1..=3).contains(&d) {
        return Err(Error::UnsupportedDimension(d));
    }
    if tol <= 0.0 {
        return Err(Error::InvalidConfig("tol must be positive".into()));
    }
    let radius_cap = (radius_for_volume(t, d) + 2.0 * (d as f64).sqrt()).ceil() as i64 + 1;
    let ncells = wedge_size(d, radius_cap);
    let mut mass = vec![0.0f64; ncells];
    let mut odometer = vec![0.0f64; ncells];
    let mut orbit_sizes = vec![0.0f64; ncells];
    let mut coords_of: Vec<[i64; 3]> = vec![[0; 3]; ncells];
    {
        let mut init = |c: &[i64]| {
            let i = wedge_index(c);
            orbit_sizes[i] = orbit_size(c);
            coords_of[i][..d].copy_from_slice(c);
        };
        match d {
            1 => (0..=radius_cap).for_each(|a| init(&[a])),
            2 => {
                for a in 0..=radius_cap {
                    for b in 0..=a {
                        init(&[a, b]);
                    }
                }
            }
            3 => {
                for a in 0..=radius_cap {
                    for b in 0..=a {
                        for c3 in 0..=b {
                            init(&[a, b, c3]);
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
    }
    mass[0] = t;

    let share = 1.0 / (2 * d) as f64;
    let mut active_hi = 0usize; // highest touched index, sweeps stay below it
    let mut sweeps = 0usize;
    loop {
        // Scan first: the exit state then satisfies w <= 1 + tol exactly.
        let mut max_excess = 0.0f64;
        for &w in &mass[..=active_hi] {
            if w - 1.0 > max_excess {
                max_excess = w - 1.0;
            }
        }
        if max_excess < tol {
            let field = SandpileField {
                d,
                t,
                tol,
                residual: max_excess,
                radius_cap,
                mass,
                odometer,
                orbit_sizes,
            };
            let support = field.mass.iter().filter(|&&w| w > 0.0).count() as f64;
            debug_assert!(
                (field.total_mass() - t).abs() <= tol * support.max(1.0) + 1e-9 * t.max(1.0),
                "mass leak: {} vs {}",
                field.total_mass(),
                t
            );
            return Ok(field);
        }

        let hi = active_hi;
        for i in 0..=hi {
            let w = mass[i];
            if w > 1.0 {
                let excess = w - 1.0;
                mass[i] = 1.0;
                odometer[i] += excess * share;
                let c = coords_of[i];
                let owner = orbit_sizes[i];
                let portion = excess * share;
                for axis in 0..d {
                    for sign in [1i64, -1] {
                        let mut n = [0i64; 3];
                        n[..d].copy_from_slice(&c[..d]);
                        n[axis] += sign;
                        canon(&mut n[..d]);
                        if n[0] > radius_cap {
                            return Err(Error::InvalidConfig(
                                "sandpile support exceeded the preallocated box".into(),
                            ));
                        }
                        let j = wedge_index(&n[..d]);
                        mass[j] += portion * owner / orbit_sizes[j];
                        if j > active_hi {
                            active_hi = j;
                        }
                    }
                }
            }
        }
        sweeps += 1;
        if sweeps > 2_000_000 {
            return Err(Error::RelaxationIterationCap { tol });
        }
    }
}

/// Argument type for [`harmonic_moment`].
pub enum HarmonicArg<'a> {
    Exact(&'a ExactPolynomial),
    Pair(&'a ComplexPairPolynomial),
}

/// `sum_x w(x) p(x)` for a discrete harmonic `p` with `p(0) = 0`.
///
/// The exact fixed point pairs to zero against discrete harmonics that
/// vanish at the origin; the relaxed field is within the tol-scaled
/// boundary bound of that.  Returns `(re, im)`.
pub fn harmonic_moment(field: &SandpileField, p: HarmonicArg<'_>) -> Result<(f64, f64)> {
    match p {
        HarmonicArg::Exact(poly) => {
            if poly.dim() != field.d {
                return Err(Error::UnsupportedDimension(poly.dim()));
            }
            if !poly.discrete_laplacian_poly().is_zero() {
                return Err(Error::NotDiscreteHarmonic);
            }
            if !poly.constant_term().eq(&num::BigRational::from_integer(0.into())) {
                return Err(Error::NonzeroAtOrigin);
            }
            let ev = crate::poly::PolyEvaluator::new(poly);
            let mut acc = Kahan::new();
            field.for_each_canonical(|c, w, _| {
                if w > 0.0 {
                    for member in orbit_members(c) {
                        let xs: Vec<f64> = member.iter().map(|&v| v as f64).collect();
                        acc.add(w * ev.eval(&xs));
                    }
                }
            });
            Ok((acc.value(), 0.0))
        }
        HarmonicArg::Pair(pp) => {
            if field.d != 2 {
                return Err(Error::UnsupportedDimension(field.d));
            }
            if !pp.is_discrete_harmonic() {
                return Err(Error::NotDiscreteHarmonic);
            }
            if !pp.coeff(0, 0).is_zero() {
                return Err(Error::NonzeroAtOrigin);
            }
            let mut re = Kahan::new();
            let mut im = Kahan::new();
            field.for_each_canonical(|c, w, _| {
                if w > 0.0 {
                    for member in orbit_members(c) {
                        let (vr, vi) = pp.eval_f64(member[0] as f64, member[1] as f64);
                        re.add(w * vr);
                        im.add(w * vi);
                    }
                }
            });
            Ok((re.value(), im.value()))
        }
    }
}

/// Bound used by the harmonic-moment contract: boundary site count times
/// `tol` times the maximum of `|p|` over the support.
pub fn harmonic_moment_bound(field: &SandpileField, max_abs_p: f64) -> f64 {
    let mut boundary = 0.0;
    field.for_each_canonical(|c, w, _| {
        if w > 0.0 && w < 1.0 {
            boundary += orbit_size(c);
        }
    });
    boundary.max(1.0) * field.tol * max_abs_p
}
