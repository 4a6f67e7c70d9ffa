//! Acceptance-level verification drivers.  Each returns a list of
//! verdicts with tolerances pinned here; the `verify` CLI subcommand and
//! the acceptance test suite both run through these.

use std::time::Instant;

use crate::error::Result;
use crate::gff;
use crate::observables::{
    quadratic_variation_check, v_quadrature, AnnularTestFunction, ModeCoefficient, RadialProfile,
};
use crate::poly::{discrete_zk, mesh_from_harmonic, ComplexPairPolynomial, ComplexRat};
use crate::sandpile::{harmonic_moment, harmonic_moment_bound, relax, HarmonicArg};
use crate::stats::{
    correlation_with_se, covariance_with_se, extract_samples, fkg_correlation, gaussian_fit,
    mean, run_ensemble, variance_with_se, vdc_scan, EnsembleConfig, EnsembleMode, PsiSpec,
    StatisticSpec, TestVerdict,
};
use rayon::prelude::*;

fn stamp(mut verdicts: Vec<TestVerdict>, started: Instant) -> Vec<TestVerdict> {
    let ms = started.elapsed().as_millis() as u64;
    for v in verdicts.iter_mut() {
        v.runtime_ms = ms;
    }
    verdicts
}

/// Acceptance tolerances.  The defaults are the pinned values; the CLI
/// can override any of them.
#[derive(Debug, Clone)]
pub struct Tolerances {
    /// Relative variance tolerance for the moment CLT.
    pub clt_rel_var: f64,
    /// Relative variance tolerance for the lateness CLT.
    pub lateness_rel_var: f64,
    /// Standard-error multiplier for every Monte Carlo comparison.
    pub z: f64,
    /// Absolute cap on cross-moment correlations.
    pub corr_cap: f64,
    /// Normality p-value floor.
    pub p_min: f64,
    /// Hard relative cap for the constant-test-function variance.
    pub const_var_cap: f64,
    /// Accepted window for the quadratic-variation ratio.
    pub qv_window: (f64, f64),
    /// Absolute sandpile mass-conservation tolerance.
    pub mass_tol: f64,
    /// Sandpile annulus width cap (lattice units).
    pub width_cap: f64,
    /// Allowed growth of the running van der Corput sup.
    pub vdc_ratio_cap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            clt_rel_var: 0.15,
            lateness_rel_var: 0.25,
            z: 3.0,
            corr_cap: 0.15,
            p_min: 0.01,
            const_var_cap: 0.10,
            qv_window: (2.0, 8.0),
            mass_tol: 1e-6,
            width_cap: 4.0,
            vdc_ratio_cap: 1.05,
        }
    }
}

/// Moment CLT: d = 2 Poisson clusters at t = 1e4, N trials; for
/// k = 1..=4 the variances of Re/Im M_k sit within max(15%, 3 se) of
/// pi/(2(k+1)), cross-moment correlations stay below 0.15 in absolute
/// value, and each sample passes the normality fit at p > 0.01.
pub fn verify_clt(
    seed: u64,
    trials: u32,
    t: f64,
    kmax: u32,
    tol: &Tolerances,
) -> Result<Vec<TestVerdict>> {
    let started = Instant::now();
    let config = EnsembleConfig {
        d: 2,
        mode: EnsembleMode::Poisson { t },
        trials,
        base_seed: seed,
        statistics: vec![StatisticSpec::Moments { kmax, t }],
        max_failure_fraction: 0.01,
    };
    let records = run_ensemble(&config)?;
    let mut verdicts = Vec::new();
    let mut samples: Vec<(String, Vec<f64>)> = Vec::new();
    for k in 1..=kmax {
        let target = std::f64::consts::PI / (2.0 * (k + 1) as f64);
        for (part, imag) in [("re", false), ("im", true)] {
            let xs = extract_samples(&records, "M", k as i32, None, imag);
            let mut v =
                gaussian_fit(format!("var_{part}_M{k}"), &xs, target, tol.clt_rel_var, tol.z)?;
            let p = v.p_value.unwrap_or(0.0);
            verdicts.push(v.clone());
            v.statistic = format!("normality_{part}_M{k}");
            v.target = tol.p_min;
            v.estimate = p;
            v.std_error = 0.0;
            v.tolerance = 0.0;
            v.one_sided = true;
            v.pass = p > tol.p_min;
            verdicts.push(v);
            samples.push((format!("{part}_M{k}"), xs));
        }
    }
    // Cross-moment decorrelation, all pairs with distinct k.
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            let ki = samples[i].0.split('M').nth(1).unwrap();
            let kj = samples[j].0.split('M').nth(1).unwrap();
            if ki == kj {
                continue;
            }
            let (r, se) = correlation_with_se(&samples[i].1, &samples[j].1);
            verdicts.push(TestVerdict::two_sided(
                format!("corr_{}_{}", samples[i].0, samples[j].0),
                0.0,
                r,
                se,
                tol.corr_cap,
            ));
        }
    }
    Ok(stamp(verdicts, started))
}

/// Phi covariance: d = 2, mesh m, psi in {1, Re p_1, Re p_2}, times
/// {0.5, 1}; the empirical covariance matrix matches the exact ball
/// integrals within 3 se, and the constant-psi variances sit within 10%
/// of `psi(0)^2 t`.
///
/// The matrix comparison has an irreducible finite-mesh bias (the jump
/// sum is a lattice Riemann sum of the ball integral, high by ~18% for
/// the degree-2 polynomial at `m^2 t = 128`), so the se-scaled tolerance
/// is only meaningful at a few hundred trials.  The constant test
/// function is unbiased at every mesh (`Var = t` exactly), so its hard
/// cap is checked on a separate larger ensemble.
pub fn verify_phi_covariance(
    seed: u64,
    trials: u32,
    m: u32,
    tol: &Tolerances,
) -> Result<Vec<TestVerdict>> {
    let started = Instant::now();
    let times = vec![0.5, 1.0];
    let psis = [PsiSpec::One, PsiSpec::RePk(1), PsiSpec::RePk(2)];
    let t_grow = (m as f64).powi(2) * times.last().unwrap();
    let config = EnsembleConfig {
        d: 2,
        mode: EnsembleMode::Poisson { t: t_grow },
        trials,
        base_seed: seed,
        statistics: psis
            .iter()
            .map(|&psi| StatisticSpec::Phi {
                psi,
                m,
                times: times.clone(),
            })
            .collect(),
        max_failure_fraction: 0.01,
    };
    let records = run_ensemble(&config)?;
    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut targets = vec![vec![0.0; 2 * psis.len()]; 2 * psis.len()];
    for (pi, psi) in psis.iter().enumerate() {
        for (ti, &t) in times.iter().enumerate() {
            names.push(format!("phi_{}_t{}", psi.label(), t));
            columns.push(extract_samples(
                &records,
                &format!("phi_{}", psi.label()),
                m as i32,
                Some(t),
                false,
            ));
            let idx = pi * times.len() + ti;
            for (pj, psj) in psis.iter().enumerate() {
                for (tj, &t2) in times.iter().enumerate() {
                    let jdx = pj * times.len() + tj;
                    targets[idx][jdx] = gff::covariance_pairing(
                        &psi.polynomial(),
                        &psj.polynomial(),
                        t,
                        t2,
                        2,
                    );
                }
            }
        }
    }
    let mut verdicts = Vec::new();
    for i in 0..columns.len() {
        for j in i..columns.len() {
            let (cov, se) = covariance_with_se(&columns[i], &columns[j]);
            verdicts.push(TestVerdict::two_sided(
                format!("cov[{}, {}]", names[i], names[j]),
                targets[i][j],
                cov,
                se,
                tol.z * se,
            ));
        }
    }
    // Hard 10% cap for the constant test function: Var Phi(1, t) = t.
    let cap_config = EnsembleConfig {
        d: 2,
        mode: EnsembleMode::Poisson { t: t_grow },
        trials: (trials * 20).max(4000),
        base_seed: seed,
        statistics: vec![StatisticSpec::Phi {
            psi: PsiSpec::One,
            m,
            times: times.clone(),
        }],
        max_failure_fraction: 0.01,
    };
    let cap_records = run_ensemble(&cap_config)?;
    for &t in &times {
        let xs = extract_samples(&cap_records, "phi_one", m as i32, Some(t), false);
        let (var, se) = variance_with_se(&xs);
        verdicts.push(TestVerdict::two_sided(
            format!("var_phi_one_t{t}_hard_cap"),
            t,
            var,
            se,
            tol.const_var_cap * t,
        ));
    }
    Ok(stamp(verdicts, started))
}

/// Lateness CLT: single `a_1` spline bump on [1, 2], discrete time,
/// cluster covering `r1 * R`; Var(X_R) within max(25%, 3 se) of the
/// quadrature value `V_0` and mean within 3 se of zero.
pub fn verify_lateness(
    seed: u64,
    trials: u32,
    r_scale: f64,
    tol: &Tolerances,
) -> Result<Vec<TestVerdict>> {
    let started = Instant::now();
    let phi = AnnularTestFunction::new(
        1.0,
        2.0,
        vec![ModeCoefficient {
            k: 1,
            amp_re: 1.0,
            amp_im: 0.0,
            profile: RadialProfile::SplineBump,
        }],
    )?;
    let v0 = v_quadrature(&phi, false)?;
    let config = EnsembleConfig {
        d: 2,
        mode: EnsembleMode::CoverRadius {
            radius: 2.0 * r_scale,
        },
        trials,
        base_seed: seed,
        statistics: vec![StatisticSpec::LatenessX {
            phi,
            r_scale,
        }],
        max_failure_fraction: 0.01,
    };
    let records = run_ensemble(&config)?;
    let xs = extract_samples(&records, "X_R", r_scale as i32, None, false);
    let mut verdicts = Vec::new();
    verdicts.push(gaussian_fit(
        "var_X_R_vs_V0",
        &xs,
        v0,
        tol.lateness_rel_var,
        tol.z,
    )?);
    let mu = mean(&xs);
    let (var, _) = variance_with_se(&xs);
    let se_mean = (var / xs.len() as f64).sqrt();
    verdicts.push(TestVerdict::two_sided(
        "mean_X_R",
        0.0,
        mu,
        se_mean,
        tol.z * se_mean,
    ));
    Ok(stamp(verdicts, started))
}

/// Quadratic variation scaling: the mean squared difference between the
/// walk-refined quadratic variation and the site sum drops by a factor
/// in [2, 8] from m to 2m (target `2^d`).
pub fn verify_qv(
    seed: u64,
    trials: u32,
    m: u32,
    t: f64,
    tol: &Tolerances,
) -> Result<Vec<TestVerdict>> {
    let started = Instant::now();
    let psi = PsiSpec::RePk(2).polynomial();
    let mut mean_sq = Vec::new();
    for mesh_size in [m, 2 * m] {
        let mesh = mesh_from_harmonic(&psi, mesh_size);
        let diffs: Vec<Result<f64>> = (1..=trials as u64)
            .into_par_iter()
            .map(|stream| {
                let (qv, sumsq) = quadratic_variation_check(2, &mesh, t, seed, stream)?;
                Ok((qv - sumsq) * (qv - sumsq))
            })
            .collect();
        let values: Result<Vec<f64>> = diffs.into_iter().collect();
        let values = values?;
        mean_sq.push((mean(&values), variance_with_se(&values).0));
    }
    let (m16, v16) = mean_sq[0];
    let (m32, v32) = mean_sq[1];
    let ratio = m16 / m32;
    // Delta-method standard error of the ratio of two independent means.
    let n = trials as f64;
    let se = ratio
        * ((v16 / (m16 * m16) + v32 / (m32 * m32)) / n)
            .sqrt();
    let mut v = TestVerdict::two_sided(
        format!("qv_msd_ratio_m{m}_to_m{}", 2 * m),
        4.0,
        ratio,
        se,
        4.0,
    );
    // The accepted window is not symmetric around the 2^d target.
    v.pass = ratio >= tol.qv_window.0 && ratio <= tol.qv_window.1;
    let mut verdicts = vec![v];
    verdicts.push(TestVerdict::two_sided(
        format!("qv_msd_m{m}"),
        m16,
        m16,
        (v16 / n).sqrt(),
        f64::MAX,
    ));
    verdicts.push(TestVerdict::two_sided(
        format!("qv_msd_m{}", 2 * m),
        m32,
        m32,
        (v32 / n).sqrt(),
        f64::MAX,
    ));
    Ok(stamp(verdicts, started))
}

/// Sandpile invariants at `t = 1e4, tol = 1e-10` plus the exact
/// one-dimensional solution at `t = 3`.
pub fn verify_sandpile(tol: &Tolerances) -> Result<Vec<TestVerdict>> {
    let started = Instant::now();
    let t = 1e4;
    let relax_tol = 1e-10;
    let field = relax(t, 2, relax_tol)?;
    let mut verdicts = Vec::new();

    let mass = field.total_mass();
    verdicts.push(TestVerdict::two_sided(
        "sandpile_mass_conservation",
        t,
        mass,
        0.0,
        tol.mass_tol,
    ));

    let mut min_w = f64::INFINITY;
    let mut max_w = f64::NEG_INFINITY;
    for (_, w) in field.support_sites() {
        min_w = min_w.min(w);
        max_w = max_w.max(w);
    }
    let mut range = TestVerdict::two_sided("sandpile_mass_range", 0.5, 0.5, 0.0, 0.5);
    range.pass = min_w >= 0.0 && max_w <= 1.0 + relax_tol;
    range.estimate = max_w;
    range.target = 1.0;
    verdicts.push(range);

    let report = field.shape_report();
    let mut width =
        TestVerdict::two_sided("sandpile_annulus_width", 0.0, report.width, 0.0, tol.width_cap);
    width.pass = report.width <= tol.width_cap;
    verdicts.push(width);

    let r_support = crate::util::radius_for_volume(t, 2) + 3.0;
    for k in 1..=4u32 {
        let pk = discrete_zk(k as i64);
        let (re, im) = harmonic_moment(&field, HarmonicArg::Pair(&pk))?;
        let max_abs = pk_magnitude_bound(&pk, r_support);
        let bound = harmonic_moment_bound(&field, max_abs);
        let value = re.hypot(im);
        verdicts.push(TestVerdict::two_sided(
            format!("sandpile_harmonic_moment_p{k}"),
            0.0,
            value,
            0.0,
            bound,
        ));
    }

    // Sharp one-dimensional solution at t = 3 to 1e-9.
    let f1 = relax(3.0, 1, 1e-12)?;
    let mut worst: f64 = 0.0;
    for x in -3i64..=3 {
        let expect = if x.abs() <= 1 { 1.0 } else { 0.0 };
        worst = worst.max((f1.mass_at(&[x]) - expect).abs());
    }
    worst = worst.max((f1.odometer_at(&[0]) - 1.0).abs());
    worst = worst.max(f1.odometer_at(&[1]).abs());
    verdicts.push(TestVerdict::two_sided(
        "sandpile_1d_t3_exact",
        0.0,
        worst,
        0.0,
        1e-9,
    ));
    Ok(stamp(verdicts, started))
}

/// Worst-case magnitude of a pair polynomial on the disk of radius `r`:
/// sum of coefficient magnitudes times the monomial radius powers.
fn pk_magnitude_bound(p: &ComplexPairPolynomial, r: f64) -> f64 {
    p.terms()
        .map(|(&(a, b), c)| {
            let cr: ComplexRat = c.clone();
            let (re, im) = cr.to_f64();
            re.hypot(im) * r.powi((a + b) as i32)
        })
        .sum()
}

/// FKG positive association: occupation counts of two disjoint boxes
/// straddling opposite sides of the boundary of a `t = 1e3` cluster are
/// nonnegatively correlated (one-sided at 3 se).
pub fn verify_fkg(seed: u64, trials: u32, t: f64, tol: &Tolerances) -> Result<Vec<TestVerdict>> {
    let started = Instant::now();
    let r = crate::util::radius_for_volume(t, 2);
    let inner = (r * 0.7) as i64;
    let outer = (r * 1.3) as i64;
    let half = (r * 0.35) as i64;
    let config = EnsembleConfig {
        d: 2,
        mode: EnsembleMode::Poisson { t },
        trials,
        base_seed: seed,
        statistics: vec![
            StatisticSpec::BoxCount {
                label: "east".into(),
                lo: [inner, -half, 0],
                hi: [outer, half, 0],
                t,
            },
            StatisticSpec::BoxCount {
                label: "west".into(),
                lo: [-outer, -half, 0],
                hi: [-inner, half, 0],
                t,
            },
        ],
        max_failure_fraction: 0.01,
    };
    let records = run_ensemble(&config)?;
    let f = extract_samples(&records, "box_count_east", 0, None, false);
    let g = extract_samples(&records, "box_count_west", 0, None, false);
    let verdicts = vec![fkg_correlation("fkg_disjoint_boxes", &f, &g, tol.z)?];
    Ok(stamp(verdicts, started))
}

/// Van der Corput boundedness: for each k and variant, the running sup
/// of `t^(-1/3) |error|` changes by less than 5% between `t = 1e5` and
/// `t = 1e6`.
pub fn verify_vdc(kmax: u32, t_max: f64, tol: &Tolerances) -> Result<Vec<TestVerdict>> {
    let started = Instant::now();
    let mid = t_max / 10.0;
    let table = vdc_scan(kmax, t_max, &[mid, t_max]);
    let mut verdicts = Vec::new();
    for row in &table.rows {
        let sup_mid = row.sup_at[0].1;
        let sup_end = row.sup_at[1].1;
        let ratio = if sup_mid == 0.0 && sup_end == 0.0 {
            1.0
        } else if sup_mid == 0.0 {
            f64::MAX
        } else {
            sup_end / sup_mid
        };
        let mut v = TestVerdict::two_sided(
            format!("vdc_{}_k{}_sup_ratio", row.variant, row.k),
            1.0,
            ratio,
            0.0,
            tol.vdc_ratio_cap - 1.0,
        );
        v.pass = sup_end.is_finite() && ratio <= tol.vdc_ratio_cap;
        verdicts.push(v);
        verdicts.push(TestVerdict::two_sided(
            format!("vdc_{}_k{}_sup_constant", row.variant, row.k),
            sup_end,
            sup_end,
            0.0,
            f64::MAX,
        ));
    }
    Ok(stamp(verdicts, started))
}

/// Closed-form self-consistency of the field references (runs in
/// seconds): mode variances and Dirichlet energies against independent
/// radial quadrature, the relative-entropy values, and the convergence
/// of the per-mode entropy series.
pub fn verify_gff_reference() -> Result<Vec<TestVerdict>> {
    let started = Instant::now();
    let mut verdicts = Vec::new();
    let mut worst_mode: f64 = 0.0;
    let mut worst_energy: f64 = 0.0;
    for d in [2u32, 3, 4] {
        for l in 0..=4u32 {
            let radius = 1.3;
            let q = crate::util::adaptive_simpson(
                |r| r.powi((d - 1 + 2 * l) as i32),
                0.0,
                radius,
                1e-13,
            )?;
            let reconstructed = q / (radius.powi(2 * l as i32) * radius.powi(2 * (d as i32 - 1)));
            let closed = gff::mode_variance(gff::FieldKind::Augmented, d, l, radius)?;
            worst_mode = worst_mode.max((reconstructed - closed).abs() / closed.abs());
            if l >= 1 {
                let lf = l as f64;
                let df = d as f64;
                let angular = lf * (lf + df - 2.0);
                let inside = crate::util::adaptive_simpson(
                    |r| (angular + lf * lf) * r.powi((2 * l + d) as i32 - 3),
                    0.0,
                    radius,
                    1e-13,
                )?;
                let closed_in = gff::dirichlet_energy(l, d, radius, gff::Region::Inside);
                worst_energy = worst_energy.max((inside - closed_in).abs() / closed_in.abs());
                let lp = -(df - 2.0) - lf;
                let outside = crate::util::adaptive_simpson(
                    |s| (angular + lp * lp) * s.powf(1.0 - df - 2.0 * lp),
                    0.0,
                    1.0 / radius,
                    1e-13,
                )? * radius.powf(2.0 * (lf - lp));
                let closed_out = gff::dirichlet_energy(l, d, radius, gff::Region::Outside);
                worst_energy = worst_energy.max((outside - closed_out).abs() / closed_out.abs());
            }
        }
    }
    verdicts.push(TestVerdict::two_sided(
        "gff_mode_variance_vs_quadrature",
        0.0,
        worst_mode,
        0.0,
        1e-8,
    ));
    verdicts.push(TestVerdict::two_sided(
        "gff_dirichlet_energy_vs_quadrature",
        0.0,
        worst_energy,
        0.0,
        1e-8,
    ));

    verdicts.push(TestVerdict::two_sided(
        "relative_entropy_f1",
        0.0,
        gff::relative_entropy_sigma(1.0)?,
        0.0,
        1e-15,
    ));
    verdicts.push(TestVerdict::two_sided(
        "relative_entropy_f2",
        0.318147,
        gff::relative_entropy_sigma(2.0)?,
        0.0,
        1e-6,
    ));

    let sums = gff::relative_entropy_partial_sums(&[100_000, 500_000, 1_000_000]);
    let tail = sums[2] - sums[1];
    let mut cauchy = TestVerdict::two_sided("relative_entropy_series_cauchy", 0.0, tail, 0.0, 1e-6);
    cauchy.pass = (0.0..1e-6).contains(&tail);
    verdicts.push(cauchy);
    Ok(stamp(verdicts, started))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gff_reference_verdicts_pass() {
        let verdicts = verify_gff_reference().unwrap();
        for v in &verdicts {
            assert!(v.pass, "{v:?}");
        }
    }

    #[test]
    fn sandpile_verdicts_small() {
        // Smaller instance of the same checks to keep unit tests quick.
        let f = relax(500.0, 2, 1e-10).unwrap();
        assert!((f.total_mass() - 500.0).abs() < 1e-7);
        assert!(f.shape_report().width <= 4.0);
    }

    #[test]
    fn qv_ratio_coarse() {
        // m = 4 vs m = 8 with a small ensemble: the ratio should land
        // in a broad window around 2^d.
        let verdicts = verify_qv(123, 120, 4, 1.0, &Tolerances::default()).unwrap();
        let ratio = &verdicts[0];
        assert!(
            ratio.estimate > 1.0 && ratio.estimate < 16.0,
            "ratio {ratio:?}"
        );
    }
}
