//! Closed-form and sampled reference values for the augmented (and
//! ordinary) Gaussian free field: spherical-mode variances, Dirichlet
//! energies, exact ball-integral covariances, the d = 2 random Fourier
//! series, and the sigma-perturbation relative entropy.

use num::bigint::BigInt;
use num::{One, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{ExactPolynomial, Rat};
use crate::util::unit_ball_volume;
use crate::walk::WalkRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Ordinary,
    Augmented,
}

/// Variance of the degree-`l` spherical mode at radius `R`:
/// `R^(2-d) / (2l + d)` for the augmented field and
/// `R^(2-d) / (2l + d - 2)` for the ordinary one.
pub fn mode_variance(kind: FieldKind, d: u32, l: u32, radius: f64) -> Result<f64> {
    let denom = match kind {
        FieldKind::Augmented => 2 * l + d,
        FieldKind::Ordinary => {
            if 2 * l + d == 2 {
                return Err(Error::UndefinedMode(format!(
                    "ordinary GFF mode l={l} is undefined in d={d}"
                )));
            }
            2 * l + d - 2
        }
    };
    Ok(radius.powi(2 - d as i32) / denom as f64)
}

/// Dimension of the space of degree-`l` spherical harmonics on `S^(d-1)`.
pub fn spherical_multiplicity(d: u32, l: u32) -> u64 {
    fn simplex(n: u64, k: u64) -> u64 {
        // C(n + k - 1, k - 1): monomials of degree n in k variables
        let mut acc = 1u64;
        for j in 0..k - 1 {
            acc = acc * (n + j + 1) / (j + 1);
        }
        acc
    }
    if l == 0 {
        return 1;
    }
    let h = |n: u32| simplex(n as u64, d as u64);
    if l == 1 {
        d as u64
    } else {
        h(l) - h(l - 2)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeRow {
    pub degree: u32,
    pub multiplicity: u64,
    pub variance: f64,
}

/// Table of spherical-mode variances at a fixed radius.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSpectrum {
    pub d: u32,
    pub kind: FieldKind,
    pub radius: f64,
    pub rows: Vec<ModeRow>,
}

pub fn mode_spectrum(kind: FieldKind, d: u32, radius: f64, lmax: u32) -> Result<ModeSpectrum> {
    let lmin = match kind {
        FieldKind::Ordinary if d == 2 => 1,
        _ => 0,
    };
    let rows = (lmin..=lmax)
        .map(|l| {
            Ok(ModeRow {
                degree: l,
                multiplicity: spherical_multiplicity(d, l),
                variance: mode_variance(kind, d, l, radius)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModeSpectrum {
        d,
        kind,
        radius,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Inside,
    Outside,
    /// Inside plus outside at `R = 1`.
    WholeUnit,
}

/// Dirichlet energy of the degree-`l` harmonic extension of a sphere
/// function normalized to unit `L^2` norm on `S^(d-1)`:
/// `l R^(2l+d-2)` inside, `(l+d-2) R^(2l+d-2)` outside, and `2l + d - 2`
/// for the whole space at `R = 1`.
pub fn dirichlet_energy(l: u32, d: u32, radius: f64, region: Region) -> f64 {
    debug_assert!(l >= 1);
    let p = radius.powi(2 * l as i32 + d as i32 - 2);
    match region {
        Region::Inside => l as f64 * p,
        Region::Outside => (l + d - 2) as f64 * p,
        Region::WholeUnit => (2 * l + d - 2) as f64,
    }
}

// ---------------------------------------------------------------------------
// Exact monomial integrals over balls and spheres.
// ---------------------------------------------------------------------------

/// A rational multiple of an integer power of pi.
#[derive(Debug, Clone)]
struct PiRational {
    rat: Rat,
    pi_pow: i32,
}

impl PiRational {
    fn to_f64(&self) -> f64 {
        self.rat.to_f64().unwrap() * std::f64::consts::PI.powi(self.pi_pow)
    }
}

/// `Gamma(n/2)` as `rat * sqrt(pi)^s` with `s` in `{0, 1}`.
fn gamma_half(n: u64) -> (Rat, u32) {
    assert!(n >= 1);
    if n.is_multiple_of(2) {
        // (n/2 - 1)!
        let mut acc = BigInt::one();
        for j in 2..n / 2 {
            acc *= BigInt::from(j);
        }
        (Rat::from_integer(acc), 0)
    } else {
        // sqrt(pi) * (n-2)!! / 2^((n-1)/2)
        let mut num = BigInt::one();
        let mut j = n as i64 - 2;
        while j >= 1 {
            num *= BigInt::from(j);
            j -= 2;
        }
        let den = BigInt::from(2u64).pow(((n - 1) / 2) as u32);
        (Rat::new(num, den), 1)
    }
}

/// `int_{S^(d-1)} prod theta_i^(a_i) dtheta`, exactly.  Zero when any
/// exponent is odd; otherwise `2 prod Gamma((a_i+1)/2) / Gamma((|a|+d)/2)`.
fn sphere_monomial(exps: &[u32]) -> Option<PiRational> {
    if exps.iter().any(|&e| e % 2 == 1) {
        return None;
    }
    let d = exps.len();
    let total: u32 = exps.iter().sum();
    let mut rat = Rat::from_integer(BigInt::from(2));
    let mut sqrt_pi: i32 = 0;
    for &e in exps {
        let (g, s) = gamma_half(e as u64 + 1);
        rat *= g;
        sqrt_pi += s as i32;
    }
    let (g, s) = gamma_half(total as u64 + d as u64);
    rat /= g;
    sqrt_pi -= s as i32;
    debug_assert!(sqrt_pi % 2 == 0, "stray sqrt(pi)");
    Some(PiRational {
        rat,
        pi_pow: sqrt_pi / 2,
    })
}

/// `int_{B_r(0)} prod x_i^(a_i) dx` via the Beta-function closed form.
pub fn ball_monomial_integral(exps: &[u32], radius: f64) -> f64 {
    match sphere_monomial(exps) {
        None => 0.0,
        Some(s) => {
            let d = exps.len() as u32;
            let total: u32 = exps.iter().sum();
            s.to_f64() * radius.powi((total + d) as i32) / (total + d) as f64
        }
    }
}

/// Unit-sphere integral of a monomial, as `f64`.
pub fn sphere_monomial_integral(exps: &[u32]) -> f64 {
    sphere_monomial(exps).map_or(0.0, |s| s.to_f64())
}

/// Covariance of the Gaussian pair `(Phi(psi1, t1), Phi(psi2, t2))`:
/// the integral of `psi1 psi2` over the ball of volume `min(t1, t2)`,
/// by exact monomial integration.
pub fn covariance_pairing(
    psi1: &ExactPolynomial,
    psi2: &ExactPolynomial,
    t1: f64,
    t2: f64,
    d: usize,
) -> f64 {
    assert_eq!(psi1.dim(), d);
    assert_eq!(psi2.dim(), d);
    let t = t1.min(t2);
    let r = (t / unit_ball_volume(d)).powf(1.0 / d as f64);
    let product = psi1.mul(psi2);
    // Group exactly by (rational x pi-power x degree); convert once.
    let mut acc = 0.0;
    for (e, c) in product.terms() {
        if let Some(s) = sphere_monomial(e) {
            let total: u32 = e.iter().sum();
            let value = PiRational {
                rat: s.rat * c.clone(),
                pi_pow: s.pi_pow,
            };
            acc += value.to_f64() * r.powi((total + d as u32) as i32) / (total + d as u32) as f64;
        }
    }
    acc
}

/// Reconstruct the covariance at a single time from the mode spectrum:
/// decompose into homogeneous (harmonic) components and sum
/// `variance(l) * <psi1_l, psi2_l>` over degrees up to `lmax`, with the
/// sphere inner products scaled to the ball radius.
pub fn covariance_mode_sum(
    psi1: &ExactPolynomial,
    psi2: &ExactPolynomial,
    t: f64,
    d: usize,
    lmax: u32,
) -> Result<f64> {
    let radius = (t / unit_ball_volume(d)).powf(1.0 / d as f64);
    let mut acc = 0.0;
    for l in 0..=lmax {
        let c1 = psi1.homogeneous_component(l);
        let c2 = psi2.homogeneous_component(l);
        if c1.is_zero() || c2.is_zero() {
            continue;
        }
        let product = c1.mul(&c2);
        let mut sphere_ip = 0.0;
        for (e, c) in product.terms() {
            if let Some(s) = sphere_monomial(e) {
                sphere_ip += PiRational {
                    rat: s.rat * c.clone(),
                    pi_pow: s.pi_pow,
                }
                .to_f64();
            }
        }
        // The degree-l component of psi restricted to the sphere of
        // radius R scales by R^l; the surface pairing carries R^(d-1)
        // from each side of the measure normalization.
        let scale = radius.powi(2 * l as i32) * radius.powi(2 * (d as i32 - 1));
        acc += mode_variance(FieldKind::Augmented, d as u32, l, radius)? * sphere_ip * scale;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// The d = 2 random Fourier series.
// ---------------------------------------------------------------------------

/// Mode coefficients of the augmented-GFF restriction to the unit
/// circle: independent standard Gaussians weighted by `1/sqrt(k+1)`.
#[derive(Debug, Clone)]
pub struct FourierField2d {
    /// `alpha_0 ..= alpha_kmax`.
    pub alpha: Vec<f64>,
    /// `beta_1 ..= beta_kmax`.
    pub beta: Vec<f64>,
}

/// Draw the mode coefficients of the random Fourier series.
pub fn sample_fourier_field_2d(kmax: u32, seed: u64) -> FourierField2d {
    let mut rng = WalkRng::new(seed, 0);
    sample_fourier_field_2d_with(kmax, &mut rng)
}

pub fn sample_fourier_field_2d_with(kmax: u32, rng: &mut WalkRng) -> FourierField2d {
    let alpha: Vec<f64> = (0..=kmax).map(|_| rng.sample(StandardNormal)).collect();
    let beta: Vec<f64> = (1..=kmax).map(|_| rng.sample(StandardNormal)).collect();
    FourierField2d { alpha, beta }
}

impl FourierField2d {
    pub fn kmax(&self) -> u32 {
        (self.alpha.len() - 1) as u32
    }

    /// Evaluate the truncated series at angle `theta`.
    pub fn eval(&self, theta: f64) -> f64 {
        let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = self.alpha[0] / 2.0f64.sqrt();
        for k in 1..=self.kmax() {
            let w = 1.0 / ((k + 1) as f64).sqrt();
            let (s, c) = (k as f64 * theta).sin_cos();
            acc += w * (self.alpha[k as usize] * c + self.beta[k as usize - 1] * s);
        }
        norm * acc
    }

    /// Variance of the `cos(k theta)` coefficient of the series.
    pub fn coefficient_variance(k: u32) -> f64 {
        if k == 0 {
            1.0 / (4.0 * std::f64::consts::PI)
        } else {
            1.0 / (2.0 * std::f64::consts::PI * (k + 1) as f64)
        }
    }
}

/// Relative entropy of a standard Gaussian with respect to a centered
/// Gaussian of standard deviation `sigma`:
/// `F(sigma) = (sigma^-2 - 1)/2 + log sigma`.
pub fn relative_entropy_sigma(sigma: f64) -> Result<f64> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    Ok((sigma.powi(-2) - 1.0) / 2.0 + sigma.ln())
}

/// Partial sums of the per-mode relative entropies between the ordinary
/// and augmented fields (`sigma_j^2 = j/(j+1)`), evaluated at the given
/// checkpoints.
pub fn relative_entropy_partial_sums(checkpoints: &[u64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(checkpoints.len());
    let jmax = checkpoints.iter().copied().max().unwrap_or(0);
    let mut acc = crate::util::Kahan::new();
    let mut next = 0usize;
    for j in 1..=jmax {
        let sigma = ((j as f64) / (j as f64 + 1.0)).sqrt();
        acc.add(relative_entropy_sigma(sigma).expect("sigma > 0"));
        while next < checkpoints.len() && checkpoints[next] == j {
            out.push(acc.value());
            next += 1;
        }
    }
    while next < checkpoints.len() {
        out.push(acc.value());
        next += 1;
    }
    out
}
