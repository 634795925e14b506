use hdcca::linalg_cca::sample_correlations;
use hdcca::simulate::{
    draw_samples, gen_data, ks_to_wachter, mc_angles, mc_curve, sample_r2, seeded_rng, theory_angles, wick_check,
    wick_convergence, NoiseLaw, SignalMode, SimSpec, SpecError, Stat,
};
use hdcca::wachter::AsymptoticRegime;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn same_seed_gives_identical_data() {
    let mut spec = SimSpec::new(10, 15, 60, vec![0.6]);
    spec.seed = 42;
    let (u1, v1, _) = gen_data(&spec, 3).unwrap();
    let (u2, v2, _) = gen_data(&spec, 3).unwrap();
    assert_eq!(u1, u2);
    assert_eq!(v1, v2);
    let (u3, _, _) = gen_data(&spec, 4).unwrap();
    assert_ne!(u1, u3);
}

#[test]
fn replication_streams_are_uncorrelated() {
    let s = 4000;
    let draw = |rep: u64| -> Vec<f64> {
        let mut rng = seeded_rng(0, rep);
        (0..s).map(|_| rng.sample(StandardNormal)).collect()
    };
    let streams: Vec<Vec<f64>> = (0..6).map(draw).collect();
    for i in 0..streams.len() {
        for j in i + 1..streams.len() {
            let c = sample_r2(&streams[i], &streams[j]).sqrt();
            assert!(c < 3.0 / (s as f64).sqrt(), "streams {i},{j}: {c}");
        }
    }
}

#[test]
fn wick_rule_for_gaussian_draws() {
    let samples = draw_samples(NoiseLaw::Gaussian, 1_000_000, 2, 0);
    let dev = wick_check(&samples);
    assert!(dev < 0.02, "{dev}");
}

#[test]
fn wick_deviation_of_uniform_law() {
    // Unit-variance draws rescaled back to uniform(-1, 1).
    let samples = draw_samples(NoiseLaw::Uniform, 400_000, 2, 1) / 3f64.sqrt();
    let dev = wick_check(&samples);
    assert!((dev - 2.0 / 15.0).abs() < 0.005, "{dev}");
}

#[test]
fn wick_estimator_convergence_flags_heavy_tails() {
    let t3 = wick_convergence(&draw_samples(NoiseLaw::StudentT { df: 3.0 }, 256_000, 2, 2), 256);
    assert!(!t3.converged, "{t3:?}");
    let gauss = wick_convergence(&draw_samples(NoiseLaw::Gaussian, 256_000, 2, 2), 256);
    assert!(gauss.converged, "{gauss:?}");
    let uniform = wick_convergence(&draw_samples(NoiseLaw::Uniform, 256_000, 2, 2), 256);
    assert!(uniform.converged, "{uniform:?}");
}

#[test]
fn noise_laws_have_unit_variance() {
    for law in [NoiseLaw::Gaussian, NoiseLaw::Uniform, NoiseLaw::StudentT { df: 5.0 }] {
        let x = draw_samples(law, 200_000, 1, 7);
        let var = x.iter().map(|a| a * a).sum::<f64>() / x.len() as f64;
        assert!((var - 1.0).abs() < 0.03, "{law:?}: {var}");
    }
    assert_eq!(NoiseLaw::StudentT { df: 3.0 }.label(), "student_t:3");
}

#[test]
fn ground_truth_matches_generated_rows() {
    let mut spec = SimSpec::new(6, 8, 50, vec![0.9, 0.4]);
    spec.signal_variances = vec![4.0];
    let (u, v, truth) = gen_data(&spec, 0).unwrap();
    for q in 0..2 {
        let row: Vec<f64> = u.row(q).iter().copied().collect();
        assert_eq!(truth.x[q], row);
        let row: Vec<f64> = v.row(q).iter().copied().collect();
        assert_eq!(truth.y[q], row);
    }
    assert_eq!(truth.alpha[0], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn mixing_keeps_the_true_canonical_variables() {
    let mut plain = SimSpec::new(6, 8, 50, vec![0.9]);
    plain.seed = 5;
    let mut mixed = plain.clone();
    mixed.mixing = true;
    let (u0, _, t0) = gen_data(&plain, 0).unwrap();
    let (u1, _, t1) = gen_data(&mixed, 0).unwrap();
    assert_ne!(u0, u1);
    for (a, b) in t0.x[0].iter().zip(&t1.x[0]) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn rotated_pair_and_sinusoid_have_exact_sample_correlation() {
    for mode in [SignalMode::RotatedPair, SignalMode::Sinusoid] {
        let mut spec = SimSpec::new(5, 7, 400, vec![0.7, 0.3]);
        spec.signal_mode = mode.clone();
        let (_, _, truth) = gen_data(&spec, 0).unwrap();
        assert!((sample_r2(&truth.x[0], &truth.y[0]) - 0.49).abs() < 1e-12, "{mode:?}");
        assert!((sample_r2(&truth.x[1], &truth.y[1]) - 0.09).abs() < 1e-12, "{mode:?}");
    }
}

#[test]
fn deterministic_signal_uses_its_sample_correlation() {
    let x: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
    let y: Vec<f64> = (0..40).map(|i| (i as f64).sin() + 0.5 * (i as f64 * 0.7).cos()).collect();
    let mut spec = SimSpec::new(4, 5, 40, vec![0.5]);
    spec.signal_mode = SignalMode::Deterministic { x: x.clone(), y: y.clone() };
    assert_eq!(spec.target_rho_sq(0), sample_r2(&x, &y));
    let (u, _, _) = gen_data(&spec, 0).unwrap();
    assert_eq!(u.row(0).iter().copied().collect::<Vec<_>>(), x);
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = |f: fn(&mut SimSpec)| {
        let mut s = SimSpec::new(5, 7, 40, vec![0.5]);
        f(&mut s);
        s.validate().unwrap_err()
    };
    assert!(matches!(bad(|s| s.k = 0), SpecError::Dimension { .. }));
    assert!(matches!(bad(|s| s.signal_strengths = vec![1.0]), SpecError::Strength(_)));
    assert!(matches!(bad(|s| s.signal_strengths = vec![0.5, 0.5]), SpecError::DuplicateStrength(_)));
    assert!(matches!(bad(|s| s.signal_strengths = vec![0.1, 0.2, 0.3, 0.4, 0.5]), SpecError::TooManySignals { .. }));
    assert!(matches!(bad(|s| s.noise_law = NoiseLaw::StudentT { df: 2.0 }), SpecError::DegreesOfFreedom(_)));
    assert!(matches!(
        bad(|s| s.signal_mode = SignalMode::Deterministic { x: vec![0.0; 3], y: vec![0.0; 40] }),
        SpecError::SignalLength { .. }
    ));
    assert!(matches!(bad(|s| s.signal_variances = vec![-1.0]), SpecError::Variance(_)));
    assert!(matches!(bad(|s| s.signal_variances = vec![1.0; 6]), SpecError::VarianceCount(6, 5)));
    let spec = SimSpec::new(5, 7, 40, vec![0.5]);
    assert!(mc_angles(&spec, 0).is_err());
}

#[test]
fn stat_band_contains_the_mean() {
    let s = Stat::from_values((0..100).map(|i| i as f64).collect());
    assert!((s.mean - 49.5).abs() < 1e-12);
    assert!(s.band_lo <= s.mean && s.mean <= s.band_hi);
    assert!((s.band_lo - 2.475).abs() < 1e-9 && (s.band_hi - 96.525).abs() < 1e-9);
}

#[test]
fn noise_only_spectrum_follows_the_limiting_law() {
    let mut spec = SimSpec::new(200, 300, 1600, vec![]);
    spec.seed = 11;
    let (u, v, _) = gen_data(&spec, 0).unwrap();
    let lambdas = sample_correlations(&u, &v).unwrap();
    let r = AsymptoticRegime::from_dims(200, 300, 1600).unwrap();
    let ks = ks_to_wachter(&lambdas, &r);
    assert!(ks < 0.06, "{ks}");
    assert!(lambdas[0] < r.lambda_plus + 0.03);
}

#[test]
fn ks_distance_is_zero_on_exact_quantiles() {
    let r = AsymptoticRegime::from_dims(100, 150, 800).unwrap();
    // Midpoint quantiles by bisection on the cdf.
    let n = 200;
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let p = (i as f64 + 0.5) / n as f64;
            let (mut lo, mut hi) = (r.lambda_minus, r.lambda_plus);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if r.cdf(mid) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect();
    let ks = ks_to_wachter(&values, &r);
    assert!((ks - 0.5 / n as f64).abs() < 1e-6, "{ks}");
}

#[test]
fn angle_curve_tracks_theory_on_both_sides_of_the_cutoff() {
    let mut base = SimSpec::new(50, 250, 800, vec![]);
    base.seed = 3;
    let r = AsymptoticRegime::from_dims(50, 250, 800).unwrap();
    let grid = [0.05, 0.8];
    let curve = mc_curve(&base, &grid, 8).unwrap();
    assert_eq!(theory_angles(&r, 0.05), (90.0, 90.0));
    assert_eq!(curve[0].theta_x_theory, 90.0);
    // Below the cutoff the estimate is essentially unrelated to the signal.
    assert!(curve[0].theta_x.mean > 60.0, "{}", curve[0].theta_x.mean);
    let (tx, ty) = theory_angles(&r, 0.8);
    assert!((curve[1].theta_x.mean - tx).abs() < 3.0, "{} vs {tx}", curve[1].theta_x.mean);
    assert!((curve[1].theta_y.mean - ty).abs() < 3.0, "{} vs {ty}", curve[1].theta_y.mean);
}

#[test]
fn coordinate_variance_moves_weights_not_variables() {
    let mut unit = SimSpec::new(50, 250, 800, vec![0.85]);
    unit.seed = 9;
    let mut scaled = unit.clone();
    scaled.signal_variances = vec![4.0];
    let a = mc_angles(&unit, 10).unwrap();
    let b = mc_angles(&scaled, 10).unwrap();
    let (sa, sb) = (&a.signals[0], &b.signals[0]);
    // Same seeds, so the canonical variables coincide exactly.
    assert!((sa.theta_x.mean - sb.theta_x.mean).abs() < 1e-8);
    assert!((sa.theta_alpha.mean - sb.theta_alpha.mean).abs() > 1.0);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let mut spec = SimSpec::new(20, 30, 200, vec![0.8]);
    spec.seed = 1;
    let serial = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| mc_angles(&spec, 6).unwrap());
    let parallel = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| mc_angles(&spec, 6).unwrap());
    assert_eq!(serial.signals[0].theta_x.values, parallel.signals[0].theta_x.values);
    assert_eq!(serial.first_correlations, parallel.first_correlations);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn wick_check_is_nonnegative(x in prop::collection::vec(-3.0f64..3.0, 1..20)) {
        let n = x.len();
        let m = DMatrix::from_fn(2 * n, 1, |i, _| if i < n { x[i] } else { -x[i - n] });
        prop_assert!(wick_check(&m) >= 0.0);
    }

    #[test]
    fn generated_shapes(k in 2usize..8, extra in 0usize..5, seed in any::<u64>()) {
        let m = k + extra;
        let mut spec = SimSpec::new(k, m, 3 * (k + m), vec![0.5]);
        spec.seed = seed;
        let (u, v, truth) = gen_data(&spec, 0).unwrap();
        prop_assert_eq!(u.shape(), (k, 3 * (k + m)));
        prop_assert_eq!(v.shape(), (m, 3 * (k + m)));
        prop_assert_eq!(truth.alpha[0].len(), k);
        prop_assert_eq!(truth.beta[0].len(), m);
    }
}
