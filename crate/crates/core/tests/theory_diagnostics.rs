//! Assumption checks and theory-side quantities.

use altcp::diagnostics::{
    assumption_report, contraction_params, cross_term_bound, default_alpha, factor_spectral_norms, incoherence, init_theory_params,
    khatri_rao_norms, two_to_p_norm_estimate, Status, TheoryConstants,
};
use altcp::rng::{gaussian_matrix, seeded};
use altcp::synth::{orthonormal_columns, random_ground_truth};
use altcp::tensor::khatri_rao;
use altcp::tensor::FactoredTensor;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn unit_columns(d: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut m = gaussian_matrix(d, k, &mut seeded(seed));
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    m
}

fn small_tensor(dims: [usize; 3], k: usize, seed: u64) -> FactoredTensor {
    let f = (0..3).map(|r| unit_columns(dims[r], k, seed * 3 + r as u64)).collect();
    let w = DVector::from_fn(k, |i, _| 1.0 - 0.5 * i as f64 / k as f64);
    FactoredTensor::new(f, w).unwrap()
}

#[test]
fn incoherence_matches_pairwise_loop() {
    let t = small_tensor([9, 7, 8], 6, 1);
    let mut best = 0.0_f64;
    for r in 0..3 {
        let f = t.factor(r);
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    let s: f64 = (0..f.nrows()).map(|x| f[(x, i)] * f[(x, j)]).sum();
                    best = best.max(s.abs());
                }
            }
        }
    }
    let inc = incoherence(&t);
    assert!((inc.rho - best).abs() <= 1e-12);
    let (i, j) = inc.pair;
    let f = t.factor(inc.mode);
    assert!((f.column(i).dot(&f.column(j)).abs() - inc.rho).abs() <= 1e-12);
}

#[test]
fn factor_norms_match_svd() {
    let t = small_tensor([12, 10, 11], 8, 2);
    for (r, n) in factor_spectral_norms(&t).iter().enumerate() {
        let s = t.factor(r).clone().svd(false, false).singular_values.max();
        assert!((n - s).abs() <= 1e-12 * s.max(1.0));
    }
}

#[test]
fn khatri_rao_gram_shortcut_matches_explicit_product() {
    for seed in 0..5 {
        let t = small_tensor([6, 5, 7], 9, seed);
        let norms = khatri_rao_norms(&t).unwrap();
        for ((a, b), n) in norms {
            let kr = khatri_rao(t.factor(a), t.factor(b)).unwrap();
            let s = kr.svd(false, false).singular_values.max();
            assert!((n - s).abs() <= 1e-10, "({a},{b}): {n} vs {s}");
        }
    }
}

#[test]
fn cross_term_matches_direct_sum() {
    let t = small_tensor([10, 10, 10], 7, 3);
    let (a, b, c, w) = (t.factor(0), t.factor(1), t.factor(2), t.weights());
    let mut best = (0.0_f64, 0);
    for j in 0..7 {
        let mut v = DVector::zeros(10);
        for i in (0..7).filter(|&i| i != j) {
            v += c.column(i) * (w[i] * a.column(i).dot(&a.column(j)) * b.column(i).dot(&b.column(j)));
        }
        if v.norm() > best.0 {
            best = (v.norm(), j);
        }
    }
    let (n, j) = cross_term_bound(&t).unwrap();
    assert!((n - best.0).abs() <= 1e-12);
    assert_eq!(j, best.1);
    let one = small_tensor([10, 10, 10], 1, 4);
    assert_eq!(cross_term_bound(&one).unwrap().0, 0.0);
}

#[test]
fn random_factors_are_incoherent_with_small_cross_terms() {
    let (d, k) = (1000usize, 100usize);
    let (mut rho_ok, mut cross_ok) = (0, 0);
    for seed in 0..100 {
        let t = random_ground_truth(&[d, d, d], k, seed).unwrap().tensor;
        rho_ok += usize::from(incoherence(&t).rho <= 4.0 * ((k as f64).ln() / d as f64).sqrt());
        let bound = 10.0 * t.w_max() * (k as f64).sqrt() * (d as f64).ln() / d as f64;
        cross_ok += usize::from(cross_term_bound(&t).unwrap().0 <= bound);
    }
    assert!(rho_ok >= 99, "incoherence held in {rho_ok}/100");
    assert!(cross_ok >= 99, "cross term held in {cross_ok}/100");
}

#[test]
fn random_factor_norms_are_bounded() {
    let (d, k) = (1000usize, 500usize);
    let bound = 1.0 + 2.0 * (k as f64 / d as f64).sqrt();
    for seed in 0..10 {
        let t = random_ground_truth(&[d, d, d], k, seed).unwrap().tensor;
        let worst = factor_spectral_norms(&t).into_iter().fold(0.0, f64::max);
        assert!(worst <= bound, "seed {seed}: {worst} > {bound}");
    }
}

#[test]
fn random_khatri_rao_norms_are_near_one() {
    let (d, k) = (500usize, 500usize);
    let bound = 1.0 + (d as f64).log2() * (k as f64).sqrt() / d as f64 * 10.0;
    for seed in 0..10 {
        let t = random_ground_truth(&[d, d, d], k, seed).unwrap().tensor;
        for (pair, n) in khatri_rao_norms(&t).unwrap() {
            assert!(n <= bound, "seed {seed} {pair:?}: {n}");
        }
    }
}

#[test]
fn two_to_p_of_orthonormal_columns_is_one() {
    let m = orthonormal_columns(20, 8, &mut seeded(5));
    let est = two_to_p_norm_estimate(&m, 3.0, 20, 500, &mut seeded(6));
    assert!((est - 1.0).abs() <= 1e-6, "{est}");
    let e1 = DMatrix::from_fn(9, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
    assert_eq!(two_to_p_norm_estimate(&e1, 2.5, 4, 50, &mut seeded(1)), 1.0);
}

#[test]
fn two_to_p_estimate_agrees_with_heavy_restarts() {
    let (d, k, p) = (200usize, 300usize, 2.5);
    let m = unit_columns(d, k, 21);
    let est = two_to_p_norm_estimate(&m, p, 50, 200, &mut seeded(1));
    let oracle = two_to_p_norm_estimate(&m, p, 5000, 200, &mut seeded(2));
    assert!((est - oracle).abs() <= 0.05 * oracle, "{est} vs {oracle}");
    // any unit vector lower-bounds the norm: a column, and the top left singular vector
    let col = m.tr_mul(&m.column(0)).iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p);
    let svd = m.clone().svd(true, false);
    let u = svd.u.unwrap().column(0).into_owned();
    let top = m.tr_mul(&u).iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p);
    assert!(est >= col.max(top) - 1e-9, "{est} below {col} / {top}");
}

#[test]
fn contraction_factor_matches_hand_evaluation() {
    let (k, d) = (50usize, 100usize);
    let alpha = (d as f64).log2();
    let c = contraction_params(k, d, alpha, 1.0, 0.01, 2.0, 1.0, 0.0).unwrap();
    let spec = (1.0 + (0.5f64).sqrt()).powi(2);
    let q = 2.0 * 2.0 * (2.0 * alpha / 10.0 * spec + 0.01);
    assert!((c.q - q).abs() <= 1e-12 * q);
    assert!(c.q_warning);
    assert_eq!(c.gamma, 2.0);
    assert!((c.constant - 2.0 * 2.0 * alpha * (50f64).sqrt() / 100.0).abs() <= 1e-12);
    assert!((c.f(0.0) - alpha * (50f64).sqrt() / 100.0).abs() <= 1e-15);
}

#[test]
fn refinement_iteration_count() {
    let c = contraction_params(100, 1000, 3.0, 2.0, 0.05, 1.0, 0.5, 0.01).unwrap();
    let eps_r = (0.01 / 0.5f64).min(2.0 * (1000f64).log2().powi(2) * 10.0 / 1000.0);
    assert!((c.eps_r - eps_r).abs() <= 1e-15);
    assert_eq!(c.n_iters, Some((1.0 / (2.0 * eps_r)).log2().ceil() as u64));
    assert!(c.n_iters.unwrap() >= 1);
    assert!(contraction_params(10, 100, 3.0, 2.0, 0.05, 0.5, 1.0, 0.0).is_err());
}

#[test]
fn init_quantities_match_hand_evaluation() {
    let p = init_theory_params(100, 100, 0.05, 1.0, 1.0, 3.0, 1.0, 0.5, 1.0).unwrap();
    assert!((p.mu_e - 12.9).abs() <= 1e-12);
    assert!((p.mu_r - 4.0).abs() <= 1e-15);
    assert_eq!(p.mu_min, 4.0);
    assert!((p.mu - (8.0 + 0.5 - 1.0) / 0.5).abs() <= 1e-12);
    assert!((p.mu_limit - 19.0).abs() <= 1e-12);
    assert!(p.feasible);
    let tiny = init_theory_params(1, 100_000_000, 0.0, 1.0, 1.0, 3.0, 1.0, 0.5, 1.0).unwrap();
    assert!((tiny.mu_r - 1.0).abs() < 1e-3);
    assert!(init_theory_params(10, 100, 0.1, 1.0, 1.0, 3.0, 1.0, 1.0, 1.0).is_err());
    assert!(!init_theory_params(100, 100, 0.5, 1.0, 1.0, 3.0, 1.0, 0.5, 1.0).unwrap().feasible);
}

#[test]
fn orthonormal_truth_passes_everything() {
    let mut rng = seeded(3);
    let f = (0..3).map(|_| orthonormal_columns(64, 8, &mut rng)).collect();
    let t = FactoredTensor::new(f, DVector::from_element(8, 1.0)).unwrap();
    let r = assumption_report(&t, 0.0, &TheoryConstants::default(), 1).unwrap();
    for c in &r.checks {
        assert_ne!(c.status, Status::Fail, "{} {}", c.id, c.name);
    }
    assert!(r.all_pass());
    assert!(r.rho.rho < 1e-12);
    assert!(r.gamma >= 1.0);
}

#[test]
fn large_weight_ratio_fails_a7() {
    let d = 64;
    let mut rng = seeded(4);
    let f = (0..3).map(|_| orthonormal_columns(d, 4, &mut rng)).collect();
    let w = DVector::from_vec(vec![10.0 * (d as f64).sqrt(), 1.0, 1.0, 1.0]);
    let t = FactoredTensor::new(f, w).unwrap();
    let r = assumption_report(&t, 0.0, &TheoryConstants::default(), 1).unwrap();
    assert_eq!(r.get("A7").unwrap().status, Status::Fail);
    assert!(!r.all_pass());
    assert!(r.to_text().contains("A7.weight_ratio=fail"));
}

#[test]
fn overcomplete_random_instances_pass_the_core_checks() {
    let ids = ["A1", "A2", "A3", "A4", "A5", "A10", "A11"];
    let mut ok = 0;
    for seed in 0..20 {
        let t = random_ground_truth(&[500, 500, 500], 800, seed).unwrap().tensor;
        let r = assumption_report(&t, 0.0, &TheoryConstants::default(), seed).unwrap();
        ok += usize::from(r.checks.iter().filter(|c| ids.contains(&c.id)).all(|c| c.status == Status::Pass));
    }
    assert!(ok >= 19, "{ok}/20 seeds");
}

#[test]
fn report_serializes_every_check() {
    let t = random_ground_truth(&[40, 40, 40], 10, 2).unwrap().tensor;
    let r = assumption_report(&t, 0.01, &TheoryConstants::default(), 5).unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(v["checks"].as_array().unwrap().len(), r.checks.len());
    assert_eq!(v["k"], 10);
    let text = r.to_text();
    for c in &r.checks {
        assert!(text.contains(&format!("{}.{}=", c.id, c.name)));
    }
    assert_eq!(r.to_json(), assumption_report(&t, 0.01, &TheoryConstants::default(), 5).unwrap().to_json());
}

#[test]
fn default_alpha_scaling() {
    assert_eq!(default_alpha(1), 0.0);
    assert!((default_alpha(16) - 8.0).abs() < 1e-15);
    let c = TheoryConstants::default();
    assert_eq!(c.alpha(16), default_alpha(16));
    assert!((c.alpha0_kr(1024) - 10.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn more_restarts_never_lower_the_estimate(seed in 0u64..1000, r in 1usize..6, extra in 1usize..6) {
        let m = unit_columns(12, 18, seed);
        let a = two_to_p_norm_estimate(&m, 2.7, r, 100, &mut seeded(seed));
        let b = two_to_p_norm_estimate(&m, 2.7, r + extra, 100, &mut seeded(seed));
        prop_assert!(b >= a);
        prop_assert!(a > 0.0);
    }

    #[test]
    fn report_quantities_are_nonnegative(seed in 0u64..1000) {
        let t = small_tensor([8, 9, 10], 5, seed);
        let r = assumption_report(&t, 0.0, &TheoryConstants::default(), seed).unwrap();
        prop_assert!(r.rho.rho >= 0.0 && r.gamma >= 1.0);
        prop_assert!(r.factor_norms.iter().chain(&r.two_to_p_norms).all(|&x| x >= 0.0));
        prop_assert!(r.khatri_rao_norms.iter().all(|(_, n)| *n >= 0.0));
        prop_assert!(r.cross_term >= 0.0 && r.tensor_spectral_estimate >= 0.0);
    }
}
