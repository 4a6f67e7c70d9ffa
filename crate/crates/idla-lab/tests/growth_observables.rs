//! Cross-module integration checks: martingale structure of the
//! mean-value deviations, sandpile-referenced discrepancies, lateness
//! envelope reports, and three-dimensional growth.

use idla_lab::cluster::{
    grow, lateness, signed_discrepancy, unpack, DiscrepancyReference, GrowthMode,
};
use idla_lab::observables::{phi_a, phi_increments};
use idla_lab::poly::{mesh_from_harmonic, zk_real_imag, ExactPolynomial};
use idla_lab::sandpile::relax;
use idla_lab::stats::{mean, variance_with_se};
use idla_lab::util::radius_for_volume;
use rayon::prelude::*;

#[test]
fn phi_increments_have_zero_mean() {
    // With psi(0) = 0 the process is a martingale in t: ensemble means
    // of the window increments stay within 3 standard errors of zero.
    let m = 8u32;
    let trials = 300u64;
    let (re2, _) = zk_real_imag(2, 0, 1, 2);
    let mesh = mesh_from_harmonic(&re2, m);
    let times = [0.25, 0.5, 0.75, 1.0];
    let t_grow = (m as f64).powi(2) * times.last().unwrap();
    let rows: Vec<Vec<f64>> = (1..=trials)
        .into_par_iter()
        .map(|s| {
            let h = grow(2, GrowthMode::Poisson(t_grow), 2718, s).unwrap();
            phi_increments(&h, &mesh, &times).unwrap()
        })
        .collect();
    for w in 0..times.len() - 1 {
        let xs: Vec<f64> = rows.iter().map(|r| r[w]).collect();
        let mu = mean(&xs);
        let (var, _) = variance_with_se(&xs);
        let se = (var / xs.len() as f64).sqrt();
        assert!(
            mu.abs() <= 3.0 * se,
            "window {w}: mean {mu} vs se {se}"
        );
    }
}

#[test]
fn sandpile_reference_discrepancy_bookkeeping() {
    // Raw weight sum against the sandpile reference equals
    // #A - sum(w) = T(t) - t up to the relaxation residual.
    let t = 400.0;
    let h = grow(2, GrowthMode::Poisson(t), 31, 4).unwrap();
    let field = relax(t, 2, 1e-10).unwrap();
    let weights = signed_discrepancy(&h, t, DiscrepancyReference::Sandpile(&field)).unwrap();
    let total: f64 = weights.iter().map(|e| e.1).sum();
    let expected = h.count_at(t) as f64 - field.total_mass();
    assert!(
        (total - expected).abs() < 1e-6,
        "sum {total} vs bookkeeping {expected}"
    );
    assert!((expected - (h.count_at(t) as f64 - t)).abs() < 1e-6);

    // Support is confined to an annulus around r(t).
    let r = radius_for_volume(t, 2);
    for &(site, _) in &weights {
        let c = unpack(site, 2);
        let dist = (((c[0] * c[0] + c[1] * c[1]) as f64).sqrt() - r).abs();
        assert!(dist < 12.0, "weight far from the boundary: {dist}");
    }

    // Mismatched reference time is rejected.
    let wrong = relax(200.0, 2, 1e-8).unwrap();
    assert!(signed_discrepancy(&h, t, DiscrepancyReference::Sandpile(&wrong)).is_err());
}

#[test]
fn lateness_envelope_report() {
    // max |L_0| / log(radius) over trials, reported at increasing sizes
    // (bounded-in-practice observation, not an asymptotic assertion).
    for &n in &[1_000u64, 10_000] {
        let worst: f64 = (1..=8u64)
            .into_par_iter()
            .map(|s| {
                let h = grow(2, GrowthMode::Discrete(n), 555, s).unwrap();
                let field = lateness(&h).unwrap();
                let r = radius_for_volume(n as f64, 2);
                field.max_abs() / r.ln()
            })
            .reduce(|| 0.0, f64::max);
        println!("lateness envelope at n = {n}: max |L_0|/log r = {worst:.3}");
        assert!(worst < 10.0, "envelope {worst} at n = {n}");
    }
}

#[test]
fn three_dimensional_growth() {
    let h = grow(3, GrowthMode::Discrete(400), 77, 0).unwrap();
    assert_eq!(h.len(), 400);
    // Connected through earlier sites.
    for (i, &site) in h.sites().iter().enumerate().skip(1) {
        let c = unpack(site, 3);
        let mut ok = false;
        for axis in 0..3 {
            for sign in [-1i64, 1] {
                let mut n = c;
                n[axis] += sign;
                if h
                    .order_index(idla_lab::cluster::pack(&n[..3]))
                    .is_some_and(|j| (j as usize) < i)
                {
                    ok = true;
                }
            }
        }
        assert!(ok, "site {i} disconnected");
    }
    // Constant test polynomial counts particles in d = 3 as well.
    let hp = grow(3, GrowthMode::Poisson(200.0), 77, 1).unwrap();
    let mesh = mesh_from_harmonic(&ExactPolynomial::one(3), 2);
    let t = 10.0;
    let got = phi_a(&hp, &mesh, t).unwrap();
    let md = 8.0;
    let expected = (hp.count_at(md * t) as f64 - md * t) / md.sqrt();
    assert!((got - expected).abs() < 1e-12);
}
