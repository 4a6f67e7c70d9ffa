//! The statistics the limit theorems are about: mean-value-property
//! deviations `Phi_A`, complex moments `M_k`, the lateness statistic
//! `X_R` with its variance quadrature, quadratic-variation checks, and
//! test-function pairings of discrepancy fields.

use serde::{Deserialize, Serialize};

use crate::cluster::{
    grow_with_observer, unpack, ClusterHistory, GrowthMode, GrowthObserver, LatenessField,
};
use crate::error::{Error, Result};
use crate::poly::MeshPolynomial;
use crate::util::{adaptive_simpson_piecewise, radius_for_volume, Kahan, KahanComplex};

// ---------------------------------------------------------------------------
// Annular test functions
// ---------------------------------------------------------------------------

/// Radial coefficient profile on `[r0, r1]`.
///
/// The spline bump is a cardinal cubic B-spline scaled to the support
/// and normalized to peak 1: it vanishes with two continuous
/// derivatives at both endpoints.  The sharp profile (indicator of the
/// support) exists for closed-form oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialProfile {
    SplineBump,
    Sharp,
}

/// Piecewise-cubic coefficients of the normalized B-spline in the
/// variable `s in [p, p+1]`, per piece `p = 0..4`: value is
/// `sum_j C[p][j] s^j`, already scaled to peak 1.
const BSPLINE: [[f64; 4]; 4] = [
    [0.0, 0.0, 0.0, 0.25],
    [1.0, -3.0, 3.0, -0.75],
    [-11.0, 15.0, -6.0, 0.75],
    [16.0, -12.0, 3.0, -0.25],
];

impl RadialProfile {
    pub fn value(&self, r: f64, r0: f64, r1: f64) -> f64 {
        if r < r0 || r > r1 {
            return 0.0;
        }
        match self {
            RadialProfile::Sharp => 1.0,
            RadialProfile::SplineBump => {
                let h = (r1 - r0) / 4.0;
                let s = (r - r0) / h;
                let p = (s.floor() as usize).min(3);
                let c = &BSPLINE[p];
                ((c[3] * s + c[2]) * s + c[1]) * s + c[0]
            }
        }
    }

    /// `int b(r) r^pow dr` over `[lo, hi] ∩ [r0, r1]`, in closed form.
    pub fn integral_rpow(&self, r0: f64, r1: f64, lo: f64, hi: f64, pow: i32) -> f64 {
        let lo = lo.max(r0);
        let hi = hi.min(r1);
        if hi <= lo {
            return 0.0;
        }
        let anti = |coeff: f64, p: i32, a: f64, b: f64| -> f64 {
            if coeff == 0.0 {
                return 0.0;
            }
            if p == -1 {
                coeff * (b / a).ln()
            } else {
                coeff * (b.powi(p + 1) - a.powi(p + 1)) / (p + 1) as f64
            }
        };
        match self {
            RadialProfile::Sharp => anti(1.0, pow, lo, hi),
            RadialProfile::SplineBump => {
                let h = (r1 - r0) / 4.0;
                let mut total = 0.0;
                for (piece, c) in BSPLINE.iter().enumerate() {
                    let a = (r0 + piece as f64 * h).max(lo);
                    let b = (r0 + (piece + 1) as f64 * h).min(hi);
                    if b <= a {
                        continue;
                    }
                    // Expand sum_j c_j ((r - r0)/h)^j into powers of r.
                    let mut rc = [0.0f64; 4];
                    for (j, &cj) in c.iter().enumerate() {
                        if cj == 0.0 {
                            continue;
                        }
                        let hj = h.powi(j as i32);
                        // (r - r0)^j = sum_i C(j,i) r^i (-r0)^(j-i)
                        for (i, slot) in rc.iter_mut().enumerate().take(j + 1) {
                            let mut binom = 1.0;
                            for q in 0..i {
                                binom = binom * (j - q) as f64 / (q + 1) as f64;
                            }
                            *slot += cj / hj * binom * (-r0).powi((j - i) as i32);
                        }
                    }
                    for (i, &ci) in rc.iter().enumerate() {
                        total += anti(ci, i as i32 + pow, a, b);
                    }
                }
                total
            }
        }
    }

    fn breakpoints(&self, r0: f64, r1: f64) -> Vec<f64> {
        match self {
            RadialProfile::Sharp => vec![r0, r1],
            RadialProfile::SplineBump => {
                let h = (r1 - r0) / 4.0;
                (0..=4).map(|p| r0 + p as f64 * h).collect()
            }
        }
    }
}

/// One Fourier mode `a_k(r) = (amp_re + i amp_im) b(r)` of a test
/// function; the `-k` coefficient is the conjugate, so the function is
/// real-valued.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModeCoefficient {
    pub k: u32,
    pub amp_re: f64,
    pub amp_im: f64,
    pub profile: RadialProfile,
}

/// Real-valued test function `phi(r e^{i theta}) = sum_{|k|<=N} a_k(r)
/// e^{i k theta}` with coefficients supported in the annulus
/// `r0 <= r <= r1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnularTestFunction {
    pub r0: f64,
    pub r1: f64,
    pub modes: Vec<ModeCoefficient>,
}

impl AnnularTestFunction {
    pub fn new(r0: f64, r1: f64, modes: Vec<ModeCoefficient>) -> Result<Self> {
        let f = Self { r0, r1, modes };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r0 > 0.0 && self.r1 > self.r0) {
            return Err(Error::InvalidConfig(
                "annulus requires 0 < r0 < r1".into(),
            ));
        }
        for m in &self.modes {
            if m.k == 0 && m.amp_im != 0.0 {
                return Err(Error::InvalidConfig(
                    "the k = 0 coefficient must be real for a real-valued function".into(),
                ));
            }
        }
        Ok(())
    }

    /// Evaluate at `(x, y)`; real by the conjugate-coefficient pairing.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let r = x.hypot(y);
        if r < self.r0 || r > self.r1 {
            return 0.0;
        }
        let theta = y.atan2(x);
        let mut acc = 0.0;
        for m in &self.modes {
            let b = m.profile.value(r, self.r0, self.r1);
            if m.k == 0 {
                acc += m.amp_re * b;
            } else {
                let (s, c) = (m.k as f64 * theta).sin_cos();
                acc += 2.0 * (m.amp_re * c - m.amp_im * s) * b;
            }
        }
        acc
    }

    /// Evaluate summing the `+k` and `-k` terms separately, tracking the
    /// imaginary residue (which cancels up to rounding).
    pub fn eval_complex(&self, x: f64, y: f64) -> (f64, f64) {
        let r = x.hypot(y);
        if r < self.r0 || r > self.r1 {
            return (0.0, 0.0);
        }
        let theta = y.atan2(x);
        let mut re = 0.0;
        let mut im = 0.0;
        for m in &self.modes {
            let b = m.profile.value(r, self.r0, self.r1);
            let (s, c) = (m.k as f64 * theta).sin_cos();
            // a_k e^{ik theta}
            re += (m.amp_re * c - m.amp_im * s) * b;
            im += (m.amp_re * s + m.amp_im * c) * b;
            if m.k != 0 {
                // a_{-k} e^{-ik theta} = conj(a_k) conj(e^{ik theta})
                re += (m.amp_re * c - m.amp_im * s) * b;
                im += -(m.amp_re * s + m.amp_im * c) * b;
            }
        }
        (re, im)
    }

    pub fn max_k(&self) -> u32 {
        self.modes.iter().map(|m| m.k).max().unwrap_or(0)
    }
}

/// Limit variance of the lateness statistic:
/// `sum_k mult 2 pi int_0^inf | int_rho^inf a_k(r) (rho/r)^(|k|+1) dr/r |^2 drho/rho`,
/// summed over `0 < |k| <= N` (plus the `k = 0` term when `include_k0`).
///
/// The inner integral is evaluated in closed form per spline piece; the
/// outer one by adaptive Simpson with Richardson stopping to relative
/// error below 1e-8.
pub fn v_quadrature(phi: &AnnularTestFunction, include_k0: bool) -> Result<f64> {
    phi.validate()?;
    let mut total = 0.0;
    for m in &phi.modes {
        if m.k == 0 && !include_k0 {
            continue;
        }
        let amp2 = m.amp_re * m.amp_re + m.amp_im * m.amp_im;
        if amp2 == 0.0 {
            continue;
        }
        let mult = if m.k == 0 { 1.0 } else { 2.0 };
        let pow = -(m.k as i32) - 2;
        let inner = |rho: f64| m.profile.integral_rpow(phi.r0, phi.r1, rho, phi.r1, pow);
        let integrand = |rho: f64| {
            if rho <= 0.0 {
                return 0.0;
            }
            let i = inner(rho);
            amp2 * rho.powi(2 * m.k as i32 + 1) * i * i
        };
        let mut breaks = vec![0.0];
        breaks.extend(m.profile.breakpoints(phi.r0, phi.r1));
        // Two passes: coarse estimate, then an absolute tolerance that
        // realizes the relative target.
        let coarse = adaptive_simpson_piecewise(integrand, &breaks, 1e-6)?;
        let tol = (coarse.abs() * 1e-9).max(1e-15);
        let fine = adaptive_simpson_piecewise(integrand, &breaks, tol)?;
        total += mult * 2.0 * std::f64::consts::PI * fine;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Phi_A and complex moments
// ---------------------------------------------------------------------------

/// The mean-value-property deviation
/// `Phi_A^m(psi, t) = m^(-d/2) [ sum_{x in A_{T(m^d t)}} psi_(m)(x/m) - m^d t psi_(m)(0) ]`.
///
/// The subtracted term is the compensator that makes the process a
/// martingale in `t`; for `psi(0) = 0` it vanishes.
pub fn phi_a(history: &ClusterHistory, mesh: &MeshPolynomial, t: f64) -> Result<f64> {
    if !history.poisson {
        return Err(Error::InvalidConfig(
            "phi_a expects a Poisson-mode history".into(),
        ));
    }
    let d = history.d;
    let md = (mesh.mesh() as f64).powi(d as i32);
    let needed = md * t;
    if needed > history.t_max * (1.0 + 1e-12) {
        return Err(Error::InsufficientHistory {
            needed,
            have: history.t_max,
        });
    }
    let count = history.count_at(needed);
    let mut acc = Kahan::new();
    let mut coords = [0.0f64; 3];
    for &site in &history.sites()[..count] {
        let c = unpack(site, d);
        for i in 0..d {
            coords[i] = c[i] as f64;
        }
        acc.add(mesh.eval_lattice(&coords[..d]));
    }
    let scale = (mesh.mesh() as f64).powf(-(d as f64) / 2.0);
    Ok(scale * (acc.value() - md * t * mesh.at_origin()))
}

/// Time argument for moment computations.
#[derive(Debug, Clone, Copy)]
pub enum TimeSpec {
    /// Discrete time: the first `n` absorbed sites.
    Count(u64),
    /// Clock time (Poisson mode).
    Time(f64),
}

/// Complex moments `M_k = r^-(k+1) sum_{z in A} z^k`, `r = sqrt(t/pi)`,
/// for `k = 1..=kmax`, with compensated accumulation (the summands reach
/// `r^k` while the total stays `O(r)`).
pub fn complex_moments(
    history: &ClusterHistory,
    time: TimeSpec,
    kmax: u32,
) -> Result<Vec<(f64, f64)>> {
    if history.d != 2 {
        return Err(Error::UnsupportedDimension(history.d));
    }
    let (count, t) = match time {
        TimeSpec::Count(n) => {
            if n as usize > history.len() {
                return Err(Error::InsufficientHistory {
                    needed: n as f64,
                    have: history.len() as f64,
                });
            }
            (n as usize, n as f64)
        }
        TimeSpec::Time(t) => {
            if t > history.t_max * (1.0 + 1e-12) {
                return Err(Error::InsufficientHistory {
                    needed: t,
                    have: history.t_max,
                });
            }
            (history.count_at(t), t)
        }
    };
    let r = (t / std::f64::consts::PI).sqrt();
    let mut sums = vec![KahanComplex::new(); kmax as usize];
    for &site in &history.sites()[..count] {
        let c = unpack(site, 2);
        let (x, y) = (c[0] as f64, c[1] as f64);
        let (mut zr, mut zi) = (x, y);
        for k in 1..=kmax {
            sums[k as usize - 1].add(zr, zi);
            if k < kmax {
                let nr = zr * x - zi * y;
                zi = zr * y + zi * x;
                zr = nr;
            }
        }
    }
    Ok(sums
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let norm = r.powi(i as i32 + 2);
            let (re, im) = s.value();
            (re / norm, im / norm)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Lateness statistic X_R
// ---------------------------------------------------------------------------

/// `X_R = (1/R^2) sum_{z in (Z+iZ)/R} L(Rz) phi(z)/|z|^2`, summed over
/// the lattice sites with `r0 <= |x|/R <= r1` only (the test function
/// vanishes elsewhere).
pub fn lateness_statistic(
    field: &LatenessField,
    phi: &AnnularTestFunction,
    r_scale: f64,
) -> Result<f64> {
    phi.validate()?;
    let rlo = phi.r0 * r_scale;
    let rhi = phi.r1 * r_scale;
    let bound = rhi.ceil() as i64;
    let (lo2, hi2) = (rlo * rlo, rhi * rhi);
    let mut acc = Kahan::new();
    for x in -bound..=bound {
        for y in -bound..=bound {
            let n2 = (x * x + y * y) as f64;
            if n2 < lo2 || n2 > hi2 || n2 == 0.0 {
                continue;
            }
            let l = field
                .get(crate::cluster::pack(&[x, y]))
                .ok_or(Error::ClusterTooSmall { radius: rhi })?;
            let p = phi.eval(x as f64 / r_scale, y as f64 / r_scale);
            if p != 0.0 {
                acc.add(l * p / n2);
            }
        }
    }
    Ok(acc.value())
}

/// Same sum evaluated through the complex mode expansion; the imaginary
/// part is a rounding residue.
pub fn lateness_statistic_complex(
    field: &LatenessField,
    phi: &AnnularTestFunction,
    r_scale: f64,
) -> Result<(f64, f64)> {
    phi.validate()?;
    let rlo = phi.r0 * r_scale;
    let rhi = phi.r1 * r_scale;
    let bound = rhi.ceil() as i64;
    let (lo2, hi2) = (rlo * rlo, rhi * rhi);
    let mut acc = KahanComplex::new();
    for x in -bound..=bound {
        for y in -bound..=bound {
            let n2 = (x * x + y * y) as f64;
            if n2 < lo2 || n2 > hi2 || n2 == 0.0 {
                continue;
            }
            let l = field
                .get(crate::cluster::pack(&[x, y]))
                .ok_or(Error::ClusterTooSmall { radius: rhi })?;
            let (pr, pi) = phi.eval_complex(x as f64 / r_scale, y as f64 / r_scale);
            acc.add(l * pr / n2, l * pi / n2);
        }
    }
    Ok(acc.value())
}

// ---------------------------------------------------------------------------
// Quadratic variation
// ---------------------------------------------------------------------------

struct QvObserver<'a> {
    mesh: &'a MeshPolynomial,
    d: usize,
    last: f64,
    qv: Kahan,
    scale: f64,
}

impl GrowthObserver for QvObserver<'_> {
    #[inline]
    fn on_particle_start(&mut self) {
        self.last = self.mesh.at_origin();
    }

    #[inline]
    fn on_step(&mut self, _from: u64, to: u64) {
        let c = unpack(to, self.d);
        let mut coords = [0.0f64; 3];
        for i in 0..self.d {
            coords[i] = c[i] as f64;
        }
        let v = self.mesh.eval_lattice(&coords[..self.d]);
        let dv = v - self.last;
        self.qv.add(self.scale * dv * dv);
        self.last = v;
    }
}

/// Grow a discrete cluster of `m^d t` particles and return the pair
/// (quadratic variation of `Phi_A` along the walk-refined filtration,
/// `m^(-d) sum_{x in A} psi_(m)(x/m)^2`).
///
/// Requires `psi(0) = 0`; the two quantities share every absorption jump
/// and differ only by the conditionally-centered within-walk terms, so
/// the expected square of the difference is `O(m^-d)`.
pub fn quadratic_variation_check(
    d: usize,
    mesh: &MeshPolynomial,
    t: f64,
    seed: u64,
    stream: u64,
) -> Result<(f64, f64)> {
    if !mesh.base().constant_term().eq(&num::BigRational::from_integer(0.into())) {
        return Err(Error::NonzeroAtOrigin);
    }
    let n = ((mesh.mesh() as f64).powi(d as i32) * t).round() as u64;
    let scale = (mesh.mesh() as f64).powi(-(d as i32));
    let mut obs = QvObserver {
        mesh,
        d,
        last: 0.0,
        qv: Kahan::new(),
        scale,
    };
    let history = grow_with_observer(d, GrowthMode::Discrete(n), seed, stream, &mut obs)?;
    let mut sumsq = Kahan::new();
    let mut coords = [0.0f64; 3];
    for &site in history.sites() {
        let c = unpack(site, d);
        for i in 0..d {
            coords[i] = c[i] as f64;
        }
        let v = mesh.eval_lattice(&coords[..d]);
        sumsq.add(scale * v * v);
    }
    Ok((obs.qv.value(), sumsq.value()))
}

/// Pair a signed discrepancy field with a test function:
/// `r^(-d/2) sum w(x) phi(x/r)` for the ball of volume `t`.
pub fn pair_discrepancy(
    weights: &[(u64, f64)],
    d: usize,
    t: f64,
    phi: impl Fn(&[f64]) -> f64,
) -> f64 {
    let r = radius_for_volume(t, d);
    let scale = r.powf(-(d as f64) / 2.0);
    let mut acc = Kahan::new();
    let mut coords = [0.0f64; 3];
    for &(site, w) in weights {
        let c = unpack(site, d);
        for i in 0..d {
            coords[i] = c[i] as f64 / r;
        }
        acc.add(w * phi(&coords[..d]));
    }
    scale * acc.value()
}

/// `Phi_A` increments over a grid of times (for martingale checks, one
/// value per window).
pub fn phi_increments(
    history: &ClusterHistory,
    mesh: &MeshPolynomial,
    times: &[f64],
) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(times.len());
    for &t in times {
        values.push(phi_a(history, mesh, t)?);
    }
    Ok(values.windows(2).map(|w| w[1] - w[0]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{grow, lateness, pack, CoordMap};
    use crate::poly::{mesh_from_harmonic, zk_real_imag, ExactPolynomial};
    use approx::assert_relative_eq;

    fn single_bump(k: u32, r0: f64, r1: f64) -> AnnularTestFunction {
        AnnularTestFunction::new(
            r0,
            r1,
            vec![ModeCoefficient {
                k,
                amp_re: 1.0,
                amp_im: 0.0,
                profile: RadialProfile::SplineBump,
            }],
        )
        .unwrap()
    }

    #[test]
    fn bspline_profile_shape() {
        let (r0, r1) = (1.0, 2.0);
        let p = RadialProfile::SplineBump;
        assert_eq!(p.value(1.0, r0, r1), 0.0);
        assert_eq!(p.value(2.0, r0, r1), 0.0);
        assert_relative_eq!(p.value(1.5, r0, r1), 1.0);
        // C^2 vanishing at the endpoints: value and difference quotients
        // go to zero.
        let h = 1e-5;
        for r in [r0, r1] {
            let inside = if r == r0 { r + h } else { r - h };
            assert!(p.value(inside, r0, r1) < 1e-9);
            let second = p.value(inside, r0, r1) - 2.0 * p.value(r, r0, r1);
            assert!(second.abs() < 1e-8);
        }
        // Closed-form integral against quadrature for several powers.
        for pow in [-4i32, -3, -1, 0, 2] {
            let closed = p.integral_rpow(r0, r1, 0.0, 10.0, pow);
            let quad = crate::util::adaptive_simpson(
                |r| p.value(r, r0, r1) * r.powi(pow),
                r0,
                r1,
                1e-12,
            )
            .unwrap();
            assert_relative_eq!(closed, quad, max_relative = 1e-9);
        }
        // Partial ranges.
        let closed = p.integral_rpow(r0, r1, 1.3, 1.7, -2);
        let quad = crate::util::adaptive_simpson(
            |r| p.value(r, r0, r1) * r.powi(-2),
            1.3,
            1.7,
            1e-12,
        )
        .unwrap();
        assert_relative_eq!(closed, quad, max_relative = 1e-9);
    }

    #[test]
    fn test_function_reality() {
        let phi = AnnularTestFunction::new(
            1.0,
            2.0,
            vec![
                ModeCoefficient {
                    k: 1,
                    amp_re: 0.7,
                    amp_im: -0.3,
                    profile: RadialProfile::SplineBump,
                },
                ModeCoefficient {
                    k: 3,
                    amp_re: -0.2,
                    amp_im: 0.5,
                    profile: RadialProfile::SplineBump,
                },
                ModeCoefficient {
                    k: 0,
                    amp_re: 0.4,
                    amp_im: 0.0,
                    profile: RadialProfile::SplineBump,
                },
            ],
        )
        .unwrap();
        for (x, y) in [(1.4, 0.3), (-1.2, 0.9), (0.0, 1.7), (-0.9, -1.1)] {
            let direct = phi.eval(x, y);
            let (re, im) = phi.eval_complex(x, y);
            assert_relative_eq!(direct, re, max_relative = 1e-12);
            assert!(im.abs() <= 1e-10 * (1.0 + re.abs()), "imag {im}");
        }
        // k = 0 with an imaginary amplitude is rejected.
        assert!(AnnularTestFunction::new(
            1.0,
            2.0,
            vec![ModeCoefficient {
                k: 0,
                amp_re: 0.0,
                amp_im: 1.0,
                profile: RadialProfile::SplineBump,
            }]
        )
        .is_err());
    }

    #[test]
    fn v_quadrature_zero_and_monotone() {
        let empty = AnnularTestFunction::new(1.0, 2.0, vec![]).unwrap();
        assert_eq!(v_quadrature(&empty, true).unwrap(), 0.0);

        // V >= V_0 with equality iff a_0 = 0.
        let phi = AnnularTestFunction::new(
            1.0,
            2.0,
            vec![
                ModeCoefficient {
                    k: 0,
                    amp_re: 0.5,
                    amp_im: 0.0,
                    profile: RadialProfile::SplineBump,
                },
                ModeCoefficient {
                    k: 1,
                    amp_re: 1.0,
                    amp_im: 0.0,
                    profile: RadialProfile::SplineBump,
                },
            ],
        )
        .unwrap();
        let v0 = v_quadrature(&phi, false).unwrap();
        let v = v_quadrature(&phi, true).unwrap();
        assert!(v > v0);

        let no_zero = single_bump(1, 1.0, 2.0);
        assert_relative_eq!(
            v_quadrature(&no_zero, false).unwrap(),
            v_quadrature(&no_zero, true).unwrap()
        );

        // Purely radial test function has V_0 = 0.
        let radial = AnnularTestFunction::new(
            1.0,
            2.0,
            vec![ModeCoefficient {
                k: 0,
                amp_re: 1.0,
                amp_im: 0.0,
                profile: RadialProfile::SplineBump,
            }],
        )
        .unwrap();
        assert_eq!(v_quadrature(&radial, false).unwrap(), 0.0);
    }

    #[test]
    fn v_quadrature_sharp_cutoff_matches_closed_form() {
        // a_1 = 1 on [1, 2] sharp: the nested integral evaluates to
        // pi ln 2 - 3 pi / 8 in closed form.
        let phi = AnnularTestFunction::new(
            1.0,
            2.0,
            vec![ModeCoefficient {
                k: 1,
                amp_re: 1.0,
                amp_im: 0.0,
                profile: RadialProfile::Sharp,
            }],
        )
        .unwrap();
        let v0 = v_quadrature(&phi, false).unwrap();
        let exact = std::f64::consts::PI * (2.0f64.ln() - 0.375);
        assert_relative_eq!(v0, exact, max_relative = 1e-8);
    }

    #[test]
    fn phi_a_constant_psi_counts_particles() {
        let one = ExactPolynomial::one(2);
        let m = 4u32;
        let mesh = mesh_from_harmonic(&one, m);
        let t = 2.0;
        let h = grow(2, GrowthMode::Poisson((m * m) as f64 * t), 7, 1).unwrap();
        let got = phi_a(&h, &mesh, t).unwrap();
        let count = h.count_at((m * m) as f64 * t) as f64;
        let expected = (count - (m * m) as f64 * t) / m as f64;
        assert_relative_eq!(got, expected, max_relative = 1e-12);
    }

    #[test]
    fn phi_a_symmetric_cluster_is_zero() {
        // Cluster = {0, +-e1, +-e2}: for psi = Re p_2 = x^2 - y^2 the
        // five-term sum cancels; psi(0) = 0 so Phi = 0.
        let sites = [[0i64, 0i64], [1, 0], [-1, 0], [0, 1], [0, -1]];
        let mut index = CoordMap::with_capacity(8);
        let mut list = Vec::new();
        let mut arrivals = Vec::new();
        for (i, s) in sites.iter().enumerate() {
            let p = pack(s);
            index.insert(p, i as u32);
            list.push(p);
            arrivals.push(i as f64 + 0.5);
        }
        let h = crate::cluster::test_history(2, list, index, Some(arrivals), 5.0);
        let (re2, _) = zk_real_imag(2, 0, 1, 2);
        let mesh = mesh_from_harmonic(&re2, 1);
        assert_eq!(phi_a(&h, &mesh, 5.0).unwrap(), 0.0);
        let (re1, _) = zk_real_imag(2, 0, 1, 1);
        let mesh1 = mesh_from_harmonic(&re1, 1);
        assert_eq!(phi_a(&h, &mesh1, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn moments_small_clusters() {
        // Cluster {0}: M_k = 0.
        let h = grow(2, GrowthMode::Discrete(1), 3, 0).unwrap();
        let m = complex_moments(&h, TimeSpec::Count(1), 4).unwrap();
        assert!(m.iter().all(|&(re, im)| re == 0.0 && im == 0.0));

        // Plus-sign cluster at r = 1 (t = pi): sum z^4 = 4, M_4 = 4.
        let sites = [[0i64, 0i64], [1, 0], [-1, 0], [0, 1], [0, -1]];
        let mut index = CoordMap::with_capacity(8);
        let mut list = Vec::new();
        let mut arrivals = Vec::new();
        for (i, s) in sites.iter().enumerate() {
            let p = pack(s);
            index.insert(p, i as u32);
            list.push(p);
            arrivals.push(0.1 * (i as f64 + 1.0));
        }
        let h = crate::cluster::test_history(2, list, index, Some(arrivals), 5.0);
        let m = complex_moments(&h, TimeSpec::Time(std::f64::consts::PI), 4).unwrap();
        assert_relative_eq!(m[3].0, 4.0, max_relative = 1e-12);
        assert_relative_eq!(m[3].1, 0.0);
        // Odd moments vanish by symmetry.
        assert_relative_eq!(m[0].0, 0.0);
        assert_relative_eq!(m[2].0, 0.0);
    }

    #[test]
    fn moments_reject_oversized_requests() {
        let h = grow(2, GrowthMode::Discrete(10), 3, 0).unwrap();
        assert!(complex_moments(&h, TimeSpec::Count(11), 2).is_err());
    }

    #[test]
    fn lateness_statistic_zero_field() {
        // L = 0 everywhere gives X_R = 0.
        let h = grow_until_radius(24.0, 11, 0);
        let mut field = lateness(&h).unwrap();
        for e in field.entries.iter_mut() {
            e.1 = 0.0;
        }
        let phi = single_bump(1, 1.0, 2.0);
        assert_eq!(lateness_statistic(&field, &phi, 12.0).unwrap(), 0.0);
    }

    fn grow_until_radius(radius: f64, seed: u64, stream: u64) -> ClusterHistory {
        crate::cluster::grow_until_radius_covered(2, radius, seed, stream).unwrap()
    }

    #[test]
    fn lateness_statistic_reality_and_coverage() {
        let h = grow_until_radius(25.0, 13, 1);
        let field = lateness(&h).unwrap();
        let phi = AnnularTestFunction::new(
            1.0,
            2.0,
            vec![
                ModeCoefficient {
                    k: 1,
                    amp_re: 0.8,
                    amp_im: 0.4,
                    profile: RadialProfile::SplineBump,
                },
                ModeCoefficient {
                    k: 2,
                    amp_re: -0.3,
                    amp_im: 0.1,
                    profile: RadialProfile::SplineBump,
                },
            ],
        )
        .unwrap();
        let direct = lateness_statistic(&field, &phi, 12.0).unwrap();
        let (re, im) = lateness_statistic_complex(&field, &phi, 12.0).unwrap();
        assert_relative_eq!(direct, re, max_relative = 1e-10);
        assert!(im.abs() <= 1e-10 * (1.0 + re.abs()));

        // Cluster too small for the annulus: error.
        let small = grow(2, GrowthMode::Discrete(50), 13, 2).unwrap();
        let small_field = lateness(&small).unwrap();
        assert!(matches!(
            lateness_statistic(&small_field, &phi, 12.0),
            Err(Error::ClusterTooSmall { .. })
        ));
    }

    #[test]
    fn qv_single_particle_is_exact() {
        // One particle settles at the origin with no steps: both
        // quantities are psi(x1)^2 = 0 for psi = Re p_1.
        let (re1, _) = zk_real_imag(2, 0, 1, 1);
        let mesh = mesh_from_harmonic(&re1, 1);
        let (qv, sumsq) = quadratic_variation_check(2, &mesh, 1.0, 17, 0).unwrap();
        assert_eq!(qv, 0.0);
        assert_eq!(sumsq, 0.0);
    }

    #[test]
    fn qv_requires_vanishing_origin() {
        let one = ExactPolynomial::one(2);
        let mesh = mesh_from_harmonic(&one, 2);
        assert!(matches!(
            quadratic_variation_check(2, &mesh, 1.0, 17, 0),
            Err(Error::NonzeroAtOrigin)
        ));
    }

    #[test]
    fn qv_pair_close_at_moderate_mesh() {
        // The difference between the walk-refined quadratic variation
        // and the site sum is a mean-zero martingale with expected
        // square O(m^-d): at m = 8 the two should agree within a few
        // multiples of the typical size of Sigma psi^2.
        let (re2, _) = zk_real_imag(2, 0, 1, 2);
        let mesh = mesh_from_harmonic(&re2, 8);
        let (qv, sumsq) = quadratic_variation_check(2, &mesh, 1.0, 23, 5).unwrap();
        assert!(qv > 0.0 && sumsq > 0.0);
        assert!((qv - sumsq).abs() < sumsq, "qv={qv} sumsq={sumsq}");
    }

    #[test]
    fn riemann_sum_matches_ball_integral() {
        // m^(-d) sum psi_(m)^2 over a t = 1e4 cluster approximates the
        // ball integral of psi^2 within 2%.
        let (re2, _) = zk_real_imag(2, 0, 1, 2);
        let mesh = mesh_from_harmonic(&re2, 1);
        let t = 1e4;
        let h = grow(2, GrowthMode::Poisson(t), 2024, 3).unwrap();
        let mut acc = Kahan::new();
        for &site in h.sites() {
            let c = unpack(site, 2);
            let v = mesh.eval_lattice(&[c[0] as f64, c[1] as f64]);
            acc.add(v * v);
        }
        let integral = crate::gff::covariance_pairing(&re2, &re2, t, t, 2);
        assert_relative_eq!(acc.value(), integral, max_relative = 0.02);
    }

    #[test]
    fn discrepancy_pairing_with_constant() {
        let t = 400.0;
        let h = grow(2, GrowthMode::Poisson(t), 5, 9).unwrap();
        let w = crate::cluster::signed_discrepancy(
            &h,
            t,
            crate::cluster::DiscrepancyReference::LatticeBall,
        )
        .unwrap();
        let paired = pair_discrepancy(&w, 2, t, |_| 1.0);
        let r = radius_for_volume(t, 2);
        let mut ball = 0i64;
        let rc = r.floor() as i64;
        for x in -rc..=rc {
            for y in -rc..=rc {
                if ((x * x + y * y) as f64) <= r * r {
                    ball += 1;
                }
            }
        }
        let expected = (h.count_at(t) as f64 - ball as f64) / r;
        assert_relative_eq!(paired, expected, max_relative = 1e-10);
    }
}
