//! Random and slice-SVD starts, gap diagnostics and the trial-count formula.

use altcp::init::{
    gap_diagnostics, random_unit, svd_init, svd_init_with_theta, theory_trial_count, trial_gap, trial_requirement, DEFAULT_SVD_MAX_SWEEPS,
    DEFAULT_SVD_TOL,
};
use altcp::rng::{gaussian_matrix, gaussian_vector, seeded, stream, Domain};
use altcp::synth::{dist, orthonormal_columns, random_ground_truth};
use altcp::tensor::{FactoredTensor, TensorView};
use altcp::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn orthonormal(d: usize, k: usize, w: &[f64], seed: u64) -> FactoredTensor {
    let mut rng = seeded(seed);
    let f: Vec<DMatrix<f64>> = (0..3).map(|_| orthonormal_columns(d, k, &mut rng)).collect();
    FactoredTensor::new(f, DVector::from_column_slice(w)).unwrap()
}

#[test]
fn random_units_are_incoherent() {
    let d = 10_000;
    let mut rng = seeded(11);
    let v: Vec<DVector<f64>> = (0..200).map(|_| random_unit(d, &mut rng)).collect();
    let bound = 5.0 * ((200f64).ln() / d as f64).sqrt();
    for i in 0..v.len() {
        assert!((v[i].norm() - 1.0).abs() < 1e-12);
        for j in 0..i {
            assert!(v[i].dot(&v[j]).abs() <= bound);
        }
    }
}

#[test]
fn slice_of_orthonormal_truth_returns_first_component() {
    let t = orthonormal(8, 3, &[2.0, 1.0, 1.0], 2);
    let theta = t.factor(2).column(0).into_owned();
    let init = svd_init_with_theta(&TensorView::Factored(t.clone()), &theta, &mut seeded(0), DEFAULT_SVD_TOL, DEFAULT_SVD_MAX_SWEEPS).unwrap();
    for r in 0..3 {
        assert!(dist(&init.vectors[r], &t.factor(r).column(0).into_owned()).unwrap() < 1e-10);
        assert!((init.vectors[r].norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_slice_is_degenerate() {
    let t = orthonormal(6, 2, &[1.0, 1.0], 4);
    let v = TensorView::Factored(t);
    let err = svd_init_with_theta(&v, &DVector::zeros(6), &mut seeded(1), DEFAULT_SVD_TOL, DEFAULT_SVD_MAX_SWEEPS).unwrap_err();
    assert!(matches!(err, Error::Degenerate(_)));
}

#[test]
fn slice_pair_attains_top_singular_value() {
    for seed in 0..10 {
        let t = random_ground_truth(&[9, 7, 6], 4, seed).unwrap().tensor;
        let theta = gaussian_vector(6, &mut seeded(seed + 100));
        let view = TensorView::Factored(t.clone());
        let init = svd_init_with_theta(&view, &theta, &mut seeded(seed), DEFAULT_SVD_TOL, DEFAULT_SVD_MAX_SWEEPS).unwrap();
        let m = view.contract_to_matrix(&theta, 2).unwrap();
        let top = m.clone().svd(false, false).singular_values.max();
        let attained = init.vectors[0].dot(&(&m * &init.vectors[1]));
        assert!((attained - top).abs() <= 1e-8 * top.max(1.0), "seed {seed}: {attained} vs {top}");
    }
}

#[test]
fn slice_starts_land_near_the_dominant_component() {
    let t = random_ground_truth(&[50, 50, 50], 25, 3).unwrap().tensor;
    let view = TensorView::Factored(t.clone());
    let (mut good, mut agree) = (0usize, 0usize);
    for i in 0..500u64 {
        let mut rng = stream(9, Domain::Trial, i);
        let init = svd_init(&view, &mut rng, DEFAULT_SVD_TOL, DEFAULT_SVD_MAX_SWEEPS).unwrap();
        let theta = init.theta.clone().unwrap();
        let diag = gap_diagnostics(&t, &theta).unwrap();
        let worst = |j: usize| (0..2).map(|r| dist(&init.vectors[r], &t.factor(r).column(j).into_owned()).unwrap()).fold(0.0, f64::max);
        let best = (0..25).min_by(|&a, &b| worst(a).total_cmp(&worst(b))).unwrap();
        if worst(best) <= 0.5 {
            good += 1;
            agree += usize::from(best == diag.argmax);
        }
    }
    assert!(good >= 5, "only {good} of 500 starts within 0.5");
    assert!(agree as f64 >= 0.9 * good as f64, "{agree} of {good} agree with argmax |λ|");
}

#[test]
fn gap_of_aligned_theta_is_infinite() {
    let t = orthonormal(10, 4, &[1.0; 4], 5);
    let d = gap_diagnostics(&t, &t.factor(2).column(0).into_owned()).unwrap();
    assert!((d.lambda[0] - 1.0).abs() < 1e-12);
    assert!(d.lambda[1..].iter().all(|x| x.abs() < 1e-12));
    assert_eq!(d.gap_ratio, f64::MAX);
    assert!(d.gap_defined);
}

#[test]
fn gap_lambda_matches_loop() {
    let mut rng = seeded(8);
    let f: Vec<DMatrix<f64>> = (0..3).map(|_| gaussian_matrix(12, 7, &mut rng)).collect();
    let w = gaussian_vector(7, &mut rng).map(|x| 1.0 + x.abs());
    let t = FactoredTensor::new(f, w).unwrap();
    let theta = gaussian_vector(12, &mut rng);
    let d = gap_diagnostics(&t, &theta).unwrap();
    let mut l1 = 0.0_f64;
    for j in 0..7 {
        let mut s = 0.0;
        for i in 0..12 {
            s += t.weights()[j] * t.factor(2)[(i, j)] * theta[i];
        }
        assert!((d.lambda[j] - s).abs() <= 1e-12 * s.abs().max(1.0));
        l1 = l1.max(s.abs());
    }
    assert!((d.lambda_1 - l1).abs() <= 1e-12 * l1);
    assert!(d.lambda_1 >= d.lambda_2 && d.gap_ratio >= 1.0);
}

#[test]
fn trial_gap_increases() {
    let mut prev = trial_gap(10.0, 5, 1.0);
    for i in 1..200 {
        let l = 10.0 * 1.2f64.powi(i);
        let g = trial_gap(l, 5, 1.0);
        assert!(g > prev);
        prev = g;
    }
}

fn g_oracle(l: f64, k: f64, c: f64) -> f64 {
    let ln = l.ln();
    (2.0 * ln).sqrt() - (ln.ln() + c) / (2.0 * (2.0 * ln).sqrt()) - (2.0 * k.ln()).sqrt()
}

#[test]
fn trial_count_matches_direct_scan() {
    // small requirement: the first L satisfying the inequality is in scan range
    let (gamma, k, rho, mu) = (1.0, 2, 0.0, -0.9);
    let req = gamma * (1.0 + mu) / (1.0 - rho * gamma * (1.0 + mu)) * 4.0 * (k as f64).log2().sqrt();
    let scan = (3u128..1_000_000).find(|&l| g_oracle(l as f64, k as f64, 1.0) >= req).unwrap();
    assert_eq!(theory_trial_count(gamma, k, rho, mu, 1.0).unwrap(), scan);
}

#[test]
fn trial_count_sits_on_the_boundary() {
    // k=2, γ=1, ρ=0, μ=1 needs L near 1e18, beyond a scan; check both sides
    let req = 2.0 * 4.0;
    assert!((trial_requirement(1.0, 2, 0.0, 1.0).unwrap() - req).abs() < 1e-12);
    let l = theory_trial_count(1.0, 2, 0.0, 1.0, 1.0).unwrap();
    assert!(g_oracle(l as f64, 2.0, 1.0) >= req - 1e-12);
    assert!(g_oracle((l - 1) as f64, 2.0, 1.0) < req + 1e-12);
}

#[test]
fn infeasible_mu_is_rejected() {
    assert!(matches!(trial_requirement(2.0, 10, 0.3, 1.0), Err(Error::Infeasible(_))));
    assert!(matches!(theory_trial_count(2.0, 10, 0.3, 1.0, 1.0), Err(Error::Infeasible(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rank_one_slice_start_is_exact(seed in 0u64..1000) {
        let mut rng = seeded(seed);
        let cols: Vec<DMatrix<f64>> = (0..3).map(|_| gaussian_matrix(7, 1, &mut rng)).collect();
        let t = FactoredTensor::canonical(cols, DVector::from_element(1, 1.0)).unwrap();
        let theta = gaussian_vector(7, &mut rng);
        prop_assume!(theta.dot(&t.factor(2).column(0)).abs() > 1e-3);
        let init = svd_init_with_theta(&TensorView::Factored(t.clone()), &theta, &mut rng, DEFAULT_SVD_TOL, DEFAULT_SVD_MAX_SWEEPS).unwrap();
        for r in 0..3 {
            prop_assert!(dist(&init.vectors[r], &t.factor(r).column(0).into_owned()).unwrap() <= 1e-8);
            prop_assert!((init.vectors[r].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_unit_has_unit_norm(d in 1usize..300, seed in 0u64..1000) {
        let v = random_unit(d, &mut seeded(seed));
        prop_assert!((v.norm() - 1.0).abs() < 1e-12);
    }
}
