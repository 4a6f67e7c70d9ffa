//! Shared numeric utilities: compensated summation, integer hashing,
//! adaptive quadrature, and ball geometry constants.

use crate::error::{Error, Result};

/// Neumaier-compensated accumulator.
///
/// High-degree moment sums cancel catastrophically (the summands reach
/// `r^k` while the total stays `O(r)`), so the plain `f64` sum loses
/// most of its digits. The compensation term recovers them.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }

    pub fn sum_iter<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
        let mut acc = Self::new();
        for v in iter {
            acc.add(v);
        }
        acc.value()
    }
}

/// Compensated accumulator for complex values.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanComplex {
    pub re: Kahan,
    pub im: Kahan,
}

impl KahanComplex {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, re: f64, im: f64) {
        self.re.add(re);
        self.im.add(im);
    }

    #[inline]
    pub fn value(&self) -> (f64, f64) {
        (self.re.value(), self.im.value())
    }
}

/// SplitMix64 finalizer; used both as a hash for packed lattice
/// coordinates and as a seed-scrambling function.
#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d049bb133111eb);
    x ^= x >> 31;
    x
}

/// Volume of the unit ball in `d` dimensions.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI / 3.0,
        4 => std::f64::consts::PI * std::f64::consts::PI / 2.0,
        _ => {
            // pi^(d/2) / Gamma(d/2 + 1)
            let half = d as f64 / 2.0;
            std::f64::consts::PI.powf(half) / statrs::function::gamma::gamma(half + 1.0)
        }
    }
}

/// Radius of the ball of volume `t`: the `r(t)` convention with
/// `omega_2 = pi`, so `B_r(0)` has volume `t`.
pub fn radius_for_volume(t: f64, d: usize) -> f64 {
    (t / unit_ball_volume(d)).powf(1.0 / d as f64)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson_rec(
    f: &mut impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    // Richardson: the composite estimate has error ~ delta / 15.
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::QuadratureNonConvergence);
    }
    let l = adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let r = adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

/// Adaptive Simpson quadrature with Richardson stopping.
///
/// `tol` is treated as an absolute tolerance for the interval; callers
/// that need a relative tolerance scale it by an estimate of the result.
pub fn adaptive_simpson(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    adaptive_simpson_rec(&mut f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Integrate over `[a, b]` split at the given interior breakpoints,
/// with a per-piece tolerance derived from `tol`.
pub fn adaptive_simpson_piecewise(
    mut f: impl FnMut(f64) -> f64,
    breaks: &[f64],
    tol: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            total += adaptive_simpson(&mut f, w[0], w[1], tol / breaks.len() as f64)?;
        }
    }
    Ok(total)
}
