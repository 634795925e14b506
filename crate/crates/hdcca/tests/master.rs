mod common;

use hdcca::cli_io::constructed_instance;
use hdcca::linalg_cca::{sample_cca, sample_correlations};
use hdcca::master::{
    asymptotic_cos2, asymptotic_numerator_factors, asymptotic_r2, canonical_coefficients, empirical_g, interlaces,
    master_residual, master_roots, master_vector_stats, pca_master, wachter_g, GMode, MasterError, MasterInputs,
    StieltjesSource,
};
use hdcca::wachter::AsymptoticRegime;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

#[test]
fn roots_interlace_with_intermediate_sequence() {
    let mut rng = common::rng(21);
    for _ in 0..100 {
        let k = rng.random_range(2..=8);
        let m = rng.random_range(k..=12);
        let s = rng.random_range(k + m + 2..=50);
        let r = rng.random_range(0.0..0.9);
        let (u, v) = common::planted_pair(&mut rng, k, m, s, r);
        let (inp, _) = MasterInputs::from_data(&u, &v).unwrap();
        let res = master_roots(&inp).unwrap();
        assert!(interlaces(&res.roots, &res.intermediate, &inp.cosines, 0.0));
        // The intermediate sequence is the spectrum of the noise rows of U against all of V.
        let mut y = sample_correlations(&u.rows(1, k - 1).into_owned(), &v).unwrap();
        y.sort_by(|a, b| b.total_cmp(a));
        assert!(max_diff(&y, &res.intermediate) < 1e-10);
    }
}

#[test]
fn interlacing_check_rejects_bad_orderings() {
    assert!(interlaces(&[0.9, 0.5], &[0.7], &[0.6], 0.0));
    assert!(!interlaces(&[0.9, 0.8], &[0.7], &[0.6], 0.0));
    assert!(!interlaces(&[0.9, 0.5], &[0.7], &[0.9], 0.0));
    assert!(!interlaces(&[0.9], &[0.7], &[], 0.0));
}

#[test]
fn coefficients_rebuild_the_sample_canonical_variables() {
    let mut rng = common::rng(22);
    let (u, v) = common::planted_pair(&mut rng, 5, 7, 40, 0.75);
    let (inp, basis) = MasterInputs::from_data(&u, &v).unwrap();
    let cca = sample_cca(&u, &v).unwrap();
    let us = DVector::from_vec(row(&u, 0));
    let vs = DVector::from_vec(row(&v, 0));
    for (i, &z) in cca.correlations_sq.iter().enumerate() {
        let c = canonical_coefficients(z, &inp).unwrap();
        let x = &us * c.alpha0 + &basis.u_basis * DVector::from_vec(c.alpha.clone());
        let y = &vs * c.beta0 + &basis.v_basis * DVector::from_vec(c.beta.clone());
        assert!((x.norm() - 1.0).abs() < 1e-9 && (y.norm() - 1.0).abs() < 1e-9);
        assert!((x.dot(&y) - z.sqrt()).abs() < 1e-9, "{} vs {}", x.dot(&y), z.sqrt());
        let xi = cca.left_variables.column(i);
        assert!((x.dot(&xi).abs() - 1.0).abs() < 1e-9);
        assert!(c.alpha0 > 0.0);
        let st = master_vector_stats(z, &inp).unwrap();
        assert!((st.alpha0_sq - c.alpha0 * c.alpha0).abs() < 1e-12);
        assert!((st.beta0_sq - c.beta0 * c.beta0).abs() < 1e-12);
    }
}

#[test]
fn repeated_cosines_are_handled() {
    let mut rng = common::rng(23);
    let cases: [&[f64]; 4] = [&[0.8, 0.8, 0.5], &[0.7, 0.4, 0.4, 0.4], &[0.6, 0.6, 0.6, 0.6], &[0.9, 0.3, 0.3]];
    for cosines in cases {
        let k = cosines.len() + 1;
        let m = k + 3;
        let (u, v, basis) = constructed_instance(&mut rng, m, 40, cosines);
        let inp = MasterInputs::from_parts(&row(&u, 0), &row(&v, 0), &basis);
        let res = master_roots(&inp).unwrap();
        let eig = sample_correlations(&u, &v).unwrap();
        assert_eq!(res.roots.len(), k);
        assert!(max_diff(&res.roots, &eig) < 1e-9, "{:?} vs {eig:?}", res.roots);
        assert!(interlaces(&res.roots, &res.intermediate, &inp.cosines, 1e-12));
    }
}

#[test]
fn decoupled_cosine_is_pinned() {
    let mut rng = common::rng(24);
    let cosines = [0.85, 0.6, 0.3];
    let (mut u, mut v, basis) = constructed_instance(&mut rng, 6, 40, &cosines);
    // Remove the signal components along the first canonical pair.
    let (u0, v0) = (basis.u_basis.column(0).into_owned(), basis.v_basis.column(0).into_owned());
    let q = DMatrix::from_columns(&[u0.clone(), v0]).qr().q();
    for mat in [&mut u, &mut v] {
        let mut r = DVector::from_vec(row(mat, 0));
        r -= &q * (q.transpose() * &r);
        mat.set_row(0, &r.transpose());
    }
    let inp = MasterInputs::from_parts(&row(&u, 0), &row(&v, 0), &basis);
    let res = master_roots(&inp).unwrap();
    let eig = sample_correlations(&u, &v).unwrap();
    assert!(max_diff(&res.roots, &eig) < 1e-9, "{:?} vs {eig:?}", res.roots);
    assert!(res.pinned.iter().any(|&p| (p - 0.85 * 0.85).abs() < 1e-12), "{:?}", res.pinned);
}

#[test]
fn residual_is_scale_free_and_guards_poles() {
    let mut rng = common::rng(25);
    let (u, v) = common::planted_pair(&mut rng, 4, 6, 30, 0.5);
    let (inp, _) = MasterInputs::from_data(&u, &v).unwrap();
    let (u2, v2) = (&u * 3.0, &v * 0.5);
    let (inp2, _) = MasterInputs::from_data(&u2, &v2).unwrap();
    for z in [0.1, 0.45, 0.93] {
        let a = master_residual(z, &inp).unwrap();
        let b = master_residual(z, &inp2).unwrap();
        assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
    }
    let c2 = inp.cosines[0] * inp.cosines[0];
    assert!(matches!(master_residual(c2, &inp), Err(MasterError::PoleProximity { .. })));
    assert!(matches!(master_vector_stats(c2, &inp), Err(MasterError::PoleProximity { .. })));
}

#[test]
fn shape_errors() {
    let mut rng = common::rng(26);
    let (u, v) = common::planted_pair(&mut rng, 6, 4, 30, 0.5);
    assert!(matches!(MasterInputs::from_data(&u, &v), Err(MasterError::Shape)));
    let (u, v) = common::planted_pair(&mut rng, 3, 4, 30, 0.5);
    let (mut inp, _) = MasterInputs::from_data(&u, &v).unwrap();
    inp.v_star_u.pop();
    assert!(matches!(master_roots(&inp), Err(MasterError::Shape)));
}

fn pca_oracle(lambda_star: f64, unit_signal: &DVector<f64>, noise: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut full = DMatrix::zeros(noise.nrows() + 1, noise.ncols());
    full.set_row(0, &(unit_signal * lambda_star).transpose());
    full.rows_mut(1, noise.nrows()).copy_from(noise);
    let eig = SymmetricEigen::new(&full * full.transpose());
    let mut pairs: Vec<(f64, f64)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(&l, v)| (l, v[0] * v[0]))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs.into_iter().unzip()
}

#[test]
fn pca_master_matches_eigensolve() {
    let mut rng = common::rng(27);
    for _ in 0..50 {
        let n = rng.random_range(2..=8);
        let s = rng.random_range(n + 2..=30);
        let noise = common::gaussian(&mut rng, n - 1, s);
        let g = common::gaussian(&mut rng, 1, s);
        let dir = g.row(0).transpose() / g.norm();
        let lambda_star = rng.random_range(0.5..6.0);
        let svd = noise.clone().svd(false, true);
        let vt = svd.v_t.unwrap();
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let sing: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let overlaps: Vec<f64> = order.iter().map(|&i| vt.row(i).transpose().dot(&dir)).collect();
        let res = pca_master(lambda_star, &sing, &overlaps).unwrap();
        let (ev, a0) = pca_oracle(lambda_star, &dir, &noise);
        assert!(max_diff(&res.roots, &ev) < 1e-9 * (1.0 + ev[0]), "{:?} vs {ev:?}", res.roots);
        assert!(max_diff(&res.alpha0_sq, &a0) < 1e-7, "{:?} vs {a0:?}", res.alpha0_sq);
    }
}

#[test]
fn pca_master_edge_cases() {
    // Zero overlap pins the noise value and leaves the signal alone.
    let res = pca_master(2.0, &[3.0, 1.0], &[0.0, 0.6]).unwrap();
    assert!(res.roots.iter().any(|&r| (r - 9.0).abs() < 1e-12));
    assert!(matches!(pca_master(2.0, &[1.5, 1.5], &[0.3, 0.4]), Err(MasterError::RepeatedSingular(_))));
    assert!(matches!(pca_master(2.0, &[1.5], &[0.3, 0.4]), Err(MasterError::Shape)));
}

#[test]
fn empirical_transform_sums_and_guards() {
    let values = [0.9, 0.5, 0.3, 0.2];
    let g = empirical_g(0.7, &values, 10, GMode::Shifted(2)).unwrap();
    let direct: f64 = [0.5, 0.3, 0.2].iter().map(|x| 1.0 / (0.7 - x)).sum::<f64>() / 10.0;
    let deriv: f64 = -[0.5f64, 0.3, 0.2].iter().map(|x| 1.0 / (0.7 - x).powi(2)).sum::<f64>() / 10.0;
    assert!((g.value - direct).abs() < 1e-15 && (g.derivative - deriv).abs() < 1e-14);
    assert_eq!(g.source, StieltjesSource::EmpiricalLambdaShifted);
    assert!(matches!(
        empirical_g(0.5 + 1e-7, &values, 10, GMode::Direct),
        Err(MasterError::PoleProximity { pole, .. }) if pole == 0.5
    ));
    // The shifted sum skips the leading value, so a point next to it is fine.
    assert!(empirical_g(0.9 + 1e-7, &values, 10, GMode::Shifted(2)).is_ok());
    let r = AsymptoticRegime::from_dims(100, 150, 800).unwrap();
    assert_eq!(wachter_g(0.9, &r).unwrap().source, StieltjesSource::WachterClosedForm);
    assert!(wachter_g(0.5 * (r.lambda_minus + r.lambda_plus), &r).is_err());
}

#[test]
fn empirical_transform_tracks_closed_form_at_scale() {
    let mut rng = common::rng(28);
    let (k, m, s) = (300, 450, 2400);
    let (u, v) = common::planted_pair(&mut rng, k, m, s, 0.7);
    let lambdas = sample_correlations(&u, &v).unwrap();
    let r = AsymptoticRegime::from_dims(k, m, s).unwrap();
    let z = lambdas[0];
    let emp = empirical_g(z, &lambdas, s, GMode::Shifted(2)).unwrap();
    let closed = wachter_g(z, &r).unwrap();
    assert!((emp.value - closed.value).abs() < 0.02 * closed.value.abs());
    let r2_emp = asymptotic_r2(z, &emp, &r).unwrap();
    let r2_closed = r.rho2_from_z(z).unwrap();
    assert!((r2_emp - r2_closed).abs() < 0.02, "{r2_emp} vs {r2_closed}");
}

fn feasible_regime(tau_m: f64, tau_k: f64) -> Option<AsymptoticRegime> {
    AsymptoticRegime::from_ratios(tau_k, tau_m).ok()
}

#[test]
fn closed_form_transform_reduces_to_explicit_formulas() {
    let mut checked = 0;
    for i in 0..8 {
        for j in 0..8 {
            let tau_m = 1.2 + 0.8 * i as f64;
            let tau_k = tau_m + 0.9 * j as f64 + 0.1;
            let Some(r) = feasible_regime(tau_m, tau_k) else { continue };
            for l in 1..8 {
                let rho_sq = r.rho_c_sq + (1.0 - r.rho_c_sq) * l as f64 / 8.0;
                let p = r.predict(rho_sq).unwrap();
                let g = wachter_g(p.z_rho, &r).unwrap();
                assert!((asymptotic_r2(p.z_rho, &g, &r).unwrap() - rho_sq).abs() < 1e-9);
                let (cx, cy) = asymptotic_cos2(p.z_rho, &g, rho_sq, &r).unwrap();
                assert!((cx - (1.0 - p.s_x)).abs() < 1e-9, "{cx} vs {}", 1.0 - p.s_x);
                assert!((cy - (1.0 - p.s_y)).abs() < 1e-9, "{cy} vs {}", 1.0 - p.s_y);
                let (fx, fy) = asymptotic_numerator_factors(p.z_rho, &g, &r).unwrap();
                assert!((fx - 1.0).abs() < 1e-9 && (fy - 1.0).abs() < 1e-9);
                checked += 1;
            }
        }
    }
    assert!(checked > 200);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roots_are_sample_correlations(seed in any::<u64>(), k in 2usize..7, extra in 0usize..5, r in 0.0f64..0.95) {
        let m = k + extra;
        let s = k + m + 10;
        let mut rng = common::rng(seed);
        let (u, v) = common::planted_pair(&mut rng, k, m, s, r);
        let (inp, _) = MasterInputs::from_data(&u, &v).unwrap();
        let res = master_roots(&inp).unwrap();
        let eig = sample_correlations(&u, &v).unwrap();
        prop_assert!(max_diff(&res.roots, &eig) < 1e-9);
        prop_assert!(res.roots.iter().all(|&z| (0.0..=1.0).contains(&z)));
    }
}
