use multifreq_core::diagnostics::{count_independent, ff_error_curve, freq_step_ratio, nf_errors, nf_errors_aligned};
use multifreq_core::geometry::{dipole_ring, Point3};
use multifreq_core::linalg::{CMat, CVec};
use multifreq_core::operators::{projection, RelativePhaseData};
use multifreq_core::rng;
use multifreq_core::Complex64;
use proptest::prelude::*;

fn gaussian(seed: u64, m: usize, n: usize) -> CMat {
    rng::complex_normal_matrix(&mut rng::seeded(seed), m, n)
}

fn vector(seed: u64, n: usize) -> CVec {
    rng::complex_normal_vector(&mut rng::seeded(seed), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn magnitude_error_never_exceeds_complex_error(seed in any::<u64>(), n in 1usize..40, scale in 0.0f64..2.0) {
        let b_ref = vector(seed, n);
        let b = &b_ref + vector(seed ^ 1, n) * Complex64::from(scale);
        let e = nf_errors(&b, &b_ref).unwrap();
        prop_assert!(e.mag <= e.compl * (1.0 + 1e-12) + 1e-15);
        let a = nf_errors_aligned(&b, &b_ref).unwrap();
        prop_assert!(a.compl <= e.compl * (1.0 + 1e-12) + 1e-15);
        prop_assert!((a.mag - e.mag).abs() <= 1e-12 * (1.0 + e.mag));
    }

    #[test]
    fn count_ignores_row_order_and_row_phases(seed in any::<u64>(), m in 2usize..24, n in 1usize..6) {
        let a = gaussian(seed, m, n);
        let base = count_independent(&a, 1e-5).unwrap();
        let mut r = rng::seeded(seed ^ 2);
        let mut rows: Vec<usize> = (0..m).collect();
        rows.reverse();
        rows.rotate_left(m / 3);
        let permuted = CMat::from_fn(m, n, |i, j| {
            a[(rows[i], j)]
        });
        let phases: Vec<Complex64> = (0..m).map(|_| rng::complex_normal(&mut r)).map(|z| z / z.norm()).collect();
        let rotated = CMat::from_fn(m, n, |i, j| a[(i, j)] * phases[i]);
        prop_assert_eq!(count_independent(&permuted, 1e-5).unwrap(), base);
        prop_assert_eq!(count_independent(&rotated, 1e-5).unwrap(), base);
        prop_assert!(base <= m.min(n * n));
    }

    #[test]
    fn pattern_error_ignores_overall_scale_and_phase(seed in any::<u64>(), n in 2usize..60, s in 1e-3f64..1e3, phi in -3.0f64..3.0) {
        let e_ref = vector(seed, n);
        let e = &e_ref + vector(seed ^ 3, n) * Complex64::from(0.1);
        let base = ff_error_curve(&e, &e_ref).unwrap();
        let g = Complex64::from_polar(s, phi);
        let scaled = ff_error_curve(&(&e * g), &e_ref).unwrap();
        for (a, b) in base.db.iter().zip(&scaled.db) {
            prop_assert!((a - b).abs() < 1e-6 || (*a < -150.0 && *b < -150.0));
        }
        prop_assert!(ff_error_curve(&e_ref, &e_ref).unwrap().max_db <= -200.0);
    }

    #[test]
    fn freq_step_ratio_is_symmetric_and_bounded(d in 0.05f64..1.5, f1 in 0.5e9f64..2e9, df in 1e6f64..5e8) {
        let ring = dipole_ring(64, d).unwrap();
        let obs = Point3::new(2.1, 0.0, 0.0);
        let fwd = freq_step_ratio(&ring, &obs, f1, f1 + df).unwrap();
        let back = freq_step_ratio(&ring, &obs, f1 + df, f1).unwrap();
        prop_assert!((fwd - back).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&fwd));
    }

    #[test]
    fn projection_fixes_its_range(seed in any::<u64>(), n in 1usize..12, extra in 0usize..20) {
        let a = gaussian(seed, n + extra, n);
        let p = projection(&a, 1e-8).unwrap();
        let b = &a * vector(seed ^ 4, n);
        let pb = p.apply(&b);
        prop_assert!((pb - &b).norm() <= 1e-9 * b.norm());
    }

    #[test]
    fn relative_phase_data_is_blind_to_a_common_phase(seed in any::<u64>(), m in 1usize..20, nf in 1usize..4, phi in -3.0f64..3.0) {
        let samples: Vec<CVec> = (0..nf).map(|k| vector(seed ^ k as u64, m)).collect();
        let rot = Complex64::from_polar(1.0, phi);
        let rotated: Vec<CVec> = samples.iter().map(|s| s * rot).collect();
        let a = RelativePhaseData::from_complex(&samples, 0).unwrap();
        let b = RelativePhaseData::from_complex(&rotated, 0).unwrap();
        for k in 0..nf {
            prop_assert!((&a.magnitudes[k] - &b.magnitudes[k]).norm() < 1e-9);
            for l in 0..m {
                let d = (a.phase_differences[k][l] - b.phase_differences[k][l]).rem_euclid(core::f64::consts::TAU);
                prop_assert!(d < 1e-9 || core::f64::consts::TAU - d < 1e-9);
            }
        }
    }
}
