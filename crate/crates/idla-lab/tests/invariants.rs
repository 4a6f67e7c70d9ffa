//! Property tests for the structural invariants: linearity and degree
//! drop of the factorial map, conjugation symmetry, coordinate packing,
//! snapshot round-trips, and test-function reality.

use idla_lab::cluster::{grow, pack, unpack, GrowthMode};
use idla_lab::io::{load_history, save_history};
use idla_lab::observables::{AnnularTestFunction, ModeCoefficient, RadialProfile};
use idla_lab::poly::{discrete_zk, harmonic_basis, xi_transform, Rat};
use num::BigInt;
use proptest::prelude::*;

fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pack_unpack_roundtrip(x in -100_000i64..100_000, y in -100_000i64..100_000, z in -100_000i64..100_000) {
        for d in 1..=3usize {
            let coords = [x, y, z];
            let packed = pack(&coords[..d]);
            prop_assert_eq!(&unpack(packed, d)[..d], &coords[..d]);
        }
    }

    #[test]
    fn xi_linear_and_degree_drop(
        a_num in -20i64..20, a_den in 1i64..8,
        b_num in -20i64..20, b_den in 1i64..8,
        i in 0usize..6, j in 0usize..6,
    ) {
        // Random rational combinations of harmonic generators stay
        // harmonic; their factorial images are discrete harmonic and the
        // correction has degree at most deg - 2.
        let basis = harmonic_basis(2, 5);
        let psi = basis[i % basis.len()]
            .scale(&rat(a_num, a_den))
            .add(&basis[j % basis.len()].scale(&rat(b_num, b_den)));
        prop_assume!(!psi.is_zero());
        prop_assert!(psi.is_harmonic());
        let img = xi_transform(&psi);
        prop_assert!(img.discrete_laplacian_poly().is_zero());
        let diff = psi.sub(&img);
        prop_assert!(diff.is_zero() || diff.degree() + 2 <= psi.degree().max(2));

        // Linearity against the component images.
        let lhs = img;
        let rhs = xi_transform(&basis[i % basis.len()])
            .scale(&rat(a_num, a_den))
            .add(&xi_transform(&basis[j % basis.len()]).scale(&rat(b_num, b_den)));
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn pk_conjugation_involution(k in 1i64..8) {
        let p = discrete_zk(k);
        prop_assert_eq!(p.conj().conj(), p.clone());
        prop_assert_eq!(discrete_zk(-k), p.conj());
    }

    #[test]
    fn snapshot_roundtrip_random_clusters(seed in 0u64..1000, stream in 0u64..8, n in 1u64..200) {
        let h = grow(2, GrowthMode::Discrete(n), seed, stream).unwrap();
        let mut buf = Vec::new();
        save_history(&h, &mut buf).unwrap();
        let back = load_history(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(h.sites(), back.sites());
        prop_assert_eq!(h.seed, back.seed);
        prop_assert_eq!(h.stream, back.stream);

        // A second serialization is byte-identical.
        let mut buf2 = Vec::new();
        save_history(&back, &mut buf2).unwrap();
        prop_assert_eq!(buf, buf2);
    }

    #[test]
    fn test_function_real_at_random_points(
        re1 in -2.0f64..2.0, im1 in -2.0f64..2.0,
        re2 in -2.0f64..2.0, im2 in -2.0f64..2.0,
        x in -2.5f64..2.5, y in -2.5f64..2.5,
    ) {
        let phi = AnnularTestFunction::new(
            0.5,
            2.5,
            vec![
                ModeCoefficient { k: 1, amp_re: re1, amp_im: im1, profile: RadialProfile::SplineBump },
                ModeCoefficient { k: 4, amp_re: re2, amp_im: im2, profile: RadialProfile::SplineBump },
            ],
        ).unwrap();
        let direct = phi.eval(x, y);
        let (re, im) = phi.eval_complex(x, y);
        prop_assert!((direct - re).abs() <= 1e-10 * (1.0 + re.abs()));
        prop_assert!(im.abs() <= 1e-10 * (1.0 + re.abs()));
    }

    #[test]
    fn poly_json_roundtrip(i in 0usize..12) {
        let basis = harmonic_basis(3, 5);
        let p = &basis[i % basis.len()];
        let img = xi_transform(p);
        let back = idla_lab::poly::exact_poly_from_json(
            &idla_lab::poly::exact_poly_to_json(&img),
        ).unwrap();
        prop_assert_eq!(img, back);
    }
}

#[test]
fn discrete_zk_zero_is_one() {
    assert_eq!(discrete_zk(0).coeff(0, 0), idla_lab::poly::ComplexRat::one());
    assert_eq!(discrete_zk(0).degree(), 0);
}

#[test]
fn mesh_polynomial_scaling_rule_holds_identically() {
    // psi_(m)(x) = m^(-k) psi1(m x): evaluate both sides off-lattice.
    let basis = harmonic_basis(2, 4);
    for psi in &basis {
        let k = psi.degree();
        let mesh = idla_lab::poly::mesh_from_harmonic(psi, 4);
        let base = idla_lab::poly::PolyEvaluator::new(mesh.base());
        for (x, y) in [(0.25, -0.5), (1.75, 0.5), (-2.25, 1.0)] {
            let lhs = mesh.eval(&[x, y]);
            let rhs = 4.0f64.powi(-(k as i32)) * base.eval(&[4.0 * x, 4.0 * y]);
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }
}

#[test]
fn ensemble_trial_failure_budget() {
    // A statistic that needs an uncovered far site fails every trial;
    // the ensemble surfaces this as a failure-budget error.
    use idla_lab::stats::{EnsembleConfig, EnsembleMode, StatisticSpec};
    let config = EnsembleConfig {
        d: 2,
        mode: EnsembleMode::Discrete { particles: 3 },
        trials: 4,
        base_seed: 5,
        statistics: vec![StatisticSpec::NegAbsorptionTime {
            label: "far".into(),
            site: [500, 0, 0],
        }],
        max_failure_fraction: 0.01,
    };
    assert!(matches!(
        idla_lab::stats::run_ensemble(&config),
        Err(idla_lab::Error::TrialFailures { .. })
    ));
}
