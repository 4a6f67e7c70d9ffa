//! Deterministic-seeded simple random walk stepping and Poisson clock
//! sampling.
//!
//! Each trial owns a `WalkRng` keyed by `(seed, stream)`; identical keys
//! give bit-identical draw sequences on every platform, and distinct
//! streams are independent by construction (ChaCha streams are separate
//! counter lanes of the same keyed cipher).

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Hard per-particle step cap.  Exit from a finite set happens almost
/// surely; the cap only distinguishes a hang from the probability-zero
/// non-exit event and is never reached at desk scale.
pub const STEP_CAP: u64 = 10_000_000_000;

/// Counter-based RNG for one trial, with a small bit buffer so direction
/// draws consume two or three bits instead of a full word.
#[derive(Debug, Clone)]
pub struct WalkRng {
    rng: ChaCha8Rng,
    pub seed: u64,
    pub stream: u64,
    bits: u64,
    nbits: u32,
}

impl WalkRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            rng,
            seed,
            stream,
            bits: 0,
            nbits: 0,
        }
    }

    #[inline]
    fn take_bits(&mut self, n: u32) -> u32 {
        if self.nbits < n {
            self.bits = self.rng.next_u64();
            self.nbits = 64;
        }
        let v = (self.bits & ((1 << n) - 1)) as u32;
        self.bits >>= n;
        self.nbits -= n;
        v
    }

    /// Uniform direction index in `0..2d`, encoded as (axis, sign):
    /// axis = dir / 2, sign = +1 for even dir and -1 for odd.
    #[inline]
    pub fn direction(&mut self, d: usize) -> u32 {
        match d {
            1 => self.take_bits(1),
            2 => self.take_bits(2),
            3 => loop {
                let v = self.take_bits(3);
                if v < 6 {
                    return v;
                }
            },
            _ => loop {
                let m = (2 * d).next_power_of_two();
                let v = self.take_bits(m.trailing_zeros());
                if (v as usize) < 2 * d {
                    return v;
                }
            },
        }
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Standard exponential via inversion.
    #[inline]
    pub fn exp1(&mut self) -> f64 {
        let u: f64 = self.rng.random();
        -(1.0 - u).ln()
    }
}

impl RngCore for WalkRng {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

/// Sample `T ~ Poisson(t)`.
///
/// Inversion (sequential search) below `t = 30`, transformed rejection
/// with squeeze (Hormann's PTRS, a normal-shaped proposal with exact
/// acceptance) above; both are exact samplers.
pub fn sample_poisson_count(t: f64, rng: &mut WalkRng) -> Result<u64> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(0);
    }
    if t < 30.0 {
        let u = rng.uniform();
        let mut p = (-t).exp();
        let mut cdf = p;
        let mut k = 0u64;
        while u > cdf {
            k += 1;
            p *= t / k as f64;
            cdf += p;
            if k > 10_000 {
                break;
            }
        }
        return Ok(k);
    }
    let b = 0.931 + 2.53 * t.sqrt();
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let v = rng.uniform();
        let u = rng.uniform() - 0.5;
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + t + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return Ok(k as u64);
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
        let rhs = k * t.ln() - t - statrs::function::gamma::ln_gamma(k + 1.0);
        if lhs <= rhs {
            return Ok(k as u64);
        }
    }
}

/// Rate-one Poisson arrival times on `[0, t_max]`.
#[derive(Debug, Clone)]
pub struct PoissonClock {
    pub t_max: f64,
    pub arrivals: Vec<f64>,
}

impl PoissonClock {
    /// Sample the count first (Poisson with expectation `t_max`), then
    /// place the arrivals as cumulative sums of sampled exponentials
    /// normalized to the window, which realizes the uniform order
    /// statistics exactly.
    pub fn sample(t_max: f64, rng: &mut WalkRng) -> Result<Self> {
        let count = sample_poisson_count(t_max, rng)?;
        let mut arrivals = Vec::with_capacity(count as usize);
        if count > 0 {
            let mut cumsum = Vec::with_capacity(count as usize + 1);
            let mut s = 0.0;
            for _ in 0..=count {
                s += rng.exp1();
                cumsum.push(s);
            }
            let total = *cumsum.last().unwrap();
            for s in cumsum.iter().take(count as usize) {
                arrivals.push(t_max * s / total);
            }
        }
        Ok(Self { t_max, arrivals })
    }

    pub fn count(&self) -> u64 {
        self.arrivals.len() as u64
    }

    /// Number of arrivals in `[0, t]`.
    pub fn count_at(&self, t: f64) -> usize {
        self.arrivals.partition_point(|&a| a <= t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_keys_reproduce_sequences() {
        let mut a = WalkRng::new(12345, 7);
        let mut b = WalkRng::new(12345, 7);
        for _ in 0..10_000 {
            assert_eq!(a.direction(2), b.direction(2));
        }
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = WalkRng::new(12345, 1);
        let mut b = WalkRng::new(12345, 2);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn directions_are_uniform_2d() {
        // Frequencies of the four directions within 3 sigma over 1e6 draws.
        let mut rng = WalkRng::new(99, 0);
        let n = 1_000_000usize;
        let mut counts = [0u64; 4];
        for _ in 0..n {
            counts[rng.direction(2) as usize] += 1;
        }
        let expect = n as f64 / 4.0;
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!(
                (c as f64 - expect).abs() < 3.0 * sigma,
                "direction counts {counts:?}"
            );
        }
    }

    #[test]
    fn directions_chi_square_uniformity() {
        // Chi-square over directions at p > 0.001, 1e7 steps, d = 2 and 3.
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        for d in [2usize, 3] {
            let mut rng = WalkRng::new(4242, d as u64);
            let n = 10_000_000usize;
            let mut counts = vec![0u64; 2 * d];
            for _ in 0..n {
                counts[rng.direction(d) as usize] += 1;
            }
            let expect = n as f64 / (2 * d) as f64;
            let x2: f64 = counts
                .iter()
                .map(|&c| {
                    let dev = c as f64 - expect;
                    dev * dev / expect
                })
                .sum();
            let dist = ChiSquared::new((2 * d - 1) as f64).unwrap();
            let p = 1.0 - dist.cdf(x2);
            assert!(p > 0.001, "d={d} chi2={x2} p={p}");
        }
    }

    #[test]
    fn poisson_zero_and_negative() {
        let mut rng = WalkRng::new(1, 1);
        assert_eq!(sample_poisson_count(0.0, &mut rng).unwrap(), 0);
        assert!(sample_poisson_count(-1.0, &mut rng).is_err());
    }

    #[test]
    fn poisson_mean_and_sd_at_large_t() {
        // Mean within 4 standard errors of t; sd/sqrt(t) in [0.9, 1.1]
        // at t = 1e4 over 1e3 draws: |T - t| has order sqrt(t).
        let t = 1e4;
        let n = 1000;
        let mut rng = WalkRng::new(2024, 0);
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_poisson_count(t, &mut rng).unwrap() as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        let se = (t / n as f64).sqrt();
        assert!((mean - t).abs() < 4.0 * se, "mean {mean}");
        let ratio = var.sqrt() / t.sqrt();
        assert!((0.9..=1.1).contains(&ratio), "sd ratio {ratio}");
    }

    #[test]
    fn poisson_small_t_matches_pmf() {
        // Inversion regime: empirical pmf of Poisson(4) against the exact
        // pmf with a generous chi-square.
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let t = 4.0;
        let n = 200_000;
        let mut rng = WalkRng::new(7, 3);
        let mut counts = [0u64; 20];
        for _ in 0..n {
            let k = sample_poisson_count(t, &mut rng).unwrap() as usize;
            counts[k.min(19)] += 1;
        }
        let mut p = (-t).exp();
        let mut probs = vec![0.0f64; 20];
        for (k, slot) in probs.iter_mut().enumerate().take(19) {
            if k > 0 {
                p *= t / k as f64;
            }
            *slot = p;
        }
        probs[19] = 1.0 - probs[..19].iter().sum::<f64>();
        let x2: f64 = counts
            .iter()
            .zip(&probs)
            .filter(|(_, &pr)| pr > 1e-9)
            .map(|(&c, &pr)| {
                let e = pr * n as f64;
                (c as f64 - e) * (c as f64 - e) / e
            })
            .sum();
        let dist = ChiSquared::new(18.0).unwrap();
        assert!(1.0 - dist.cdf(x2) > 0.001, "x2 = {x2}");
    }

    #[test]
    fn clock_arrivals_sorted_and_counted() {
        let mut rng = WalkRng::new(5, 5);
        let clock = PoissonClock::sample(500.0, &mut rng).unwrap();
        assert!(clock.arrivals.windows(2).all(|w| w[0] <= w[1]));
        assert!(clock.arrivals.iter().all(|&a| (0.0..=500.0).contains(&a)));
        assert_eq!(clock.count_at(500.0), clock.arrivals.len());
        let half = clock.count_at(250.0);
        // Half-window count is Poisson(250): allow 6 sigma.
        assert!((half as f64 - 250.0).abs() < 6.0 * 250.0f64.sqrt());
    }
}
