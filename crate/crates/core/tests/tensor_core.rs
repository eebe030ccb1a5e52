//! Contraction, matricization and norm checks against brute-force loops.

use altcp::rng::{gaussian_matrix, gaussian_vector, seeded, Rng};
use altcp::tensor::{
    khatri_rao, DenseTensor, Dims, FactoredTensor, Perturbation, TensorView, DEFAULT_DENSE_BUDGET,
};
use altcp::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn random_factored(dims: &[usize], k: usize, rng: &mut Rng) -> FactoredTensor {
    let factors = dims.iter().map(|&d| gaussian_matrix(d, k, rng)).collect();
    let weights = gaussian_vector(k, rng).map(|x| 1.0 + x.abs());
    FactoredTensor::new(factors, weights).unwrap()
}

/// Iterates every multi-index of `dims`, mode 1 fastest.
fn multi_indices(dims: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = dims.iter().product();
    (0..total)
        .map(|mut lin| {
            dims.iter()
                .map(|&d| {
                    let i = lin % d;
                    lin /= d;
                    i
                })
                .collect()
        })
        .collect()
}

fn oracle_entry(t: &FactoredTensor, idx: &[usize]) -> f64 {
    (0..t.rank())
        .map(|j| t.weights()[j] * idx.iter().enumerate().map(|(r, &i)| t.factor(r)[(i, j)]).product::<f64>())
        .sum()
}

fn oracle_vector(t: &FactoredTensor, free: usize, vs: &[DVector<f64>]) -> DVector<f64> {
    let dims = t.dims().as_slice();
    let mut out = DVector::zeros(dims[free]);
    for idx in multi_indices(dims) {
        let coeff: f64 = (0..dims.len()).filter(|&s| s != free).map(|s| vs[s][idx[s]]).product();
        out[idx[free]] += oracle_entry(t, &idx) * coeff;
    }
    out
}

fn oracle_scalar(t: &FactoredTensor, vs: &[DVector<f64>]) -> f64 {
    multi_indices(t.dims().as_slice())
        .iter()
        .map(|idx| oracle_entry(t, idx) * idx.iter().enumerate().map(|(s, &i)| vs[s][i]).product::<f64>())
        .sum()
}

fn max_abs(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).abs().max()
}

#[test]
fn build_dense_single_entry() {
    let e = |i: usize| {
        let mut m = DMatrix::zeros(3, 1);
        m[(i, 0)] = 1.0;
        m
    };
    let t = FactoredTensor::new(vec![e(0), e(1), e(2)], DVector::from_element(1, 2.0)).unwrap();
    let d = t.build_dense(DEFAULT_DENSE_BUDGET).unwrap();
    for idx in multi_indices(&[3, 3, 3]) {
        let expect = if idx == [0, 1, 2] { 2.0 } else { 0.0 };
        assert_eq!(d.get(&idx), expect);
    }
}

#[test]
fn build_dense_duplicate_component_doubles() {
    let mut rng = seeded(1);
    let single = random_factored(&[3, 4, 2], 1, &mut rng);
    let (f, w) = single.clone().into_parts();
    let doubled = FactoredTensor::new(
        f.iter().map(|m| DMatrix::from_fn(m.nrows(), 2, |i, _| m[(i, 0)])).collect(),
        DVector::from_element(2, w[0]),
    )
    .unwrap();
    let a = single.build_dense(1000).unwrap();
    let b = doubled.build_dense(1000).unwrap();
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((2.0 * x - y).abs() < 1e-12);
    }
}

#[test]
fn build_dense_matches_triple_loop() {
    let mut rng = seeded(2);
    let t = random_factored(&[6, 6, 6], 4, &mut rng);
    let d = t.build_dense(DEFAULT_DENSE_BUDGET).unwrap();
    for idx in multi_indices(&[6, 6, 6]) {
        assert!((d.get(&idx) - oracle_entry(&t, &idx)).abs() < 1e-12);
    }
}

#[test]
fn build_dense_budget_error_names_count() {
    let mut rng = seeded(3);
    let t = random_factored(&[10, 10, 10], 2, &mut rng);
    match t.build_dense(999) {
        Err(e @ Error::Capacity { required: 1000, .. }) => assert!(e.to_string().contains("1000")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn rank_one_vector_contraction() {
    let e = |i: usize| {
        let mut m = DMatrix::zeros(3, 1);
        m[(i, 0)] = 1.0;
        m
    };
    let t = TensorView::Factored(FactoredTensor::new(vec![e(0), e(1), e(2)], DVector::from_element(1, 2.0)).unwrap());
    let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let e2 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
    let v = t.contract_to_vector(2, &[&e1, &e2]).unwrap();
    assert_eq!(v, DVector::from_vec(vec![0.0, 0.0, 2.0]));
}

fn orthonormal(d: usize, k: usize, rng: &mut Rng) -> DMatrix<f64> {
    let q = gaussian_matrix(d, k, rng).qr().q();
    q.columns(0, k).into_owned()
}

#[test]
fn orthonormal_components_contract_exactly() {
    let mut rng = seeded(4);
    let (a, b, c) = (orthonormal(7, 3, &mut rng), orthonormal(7, 3, &mut rng), orthonormal(7, 3, &mut rng));
    let w = DVector::from_vec(vec![3.0, 2.0, 0.5]);
    let t = TensorView::Factored(FactoredTensor::new(vec![a.clone(), b.clone(), c.clone()], w.clone()).unwrap());
    for j in 0..3 {
        let aj = a.column(j).into_owned();
        let bj = b.column(j).into_owned();
        let v = t.contract_to_vector(2, &[&aj, &bj]).unwrap();
        assert!(max_abs(&v, &(c.column(j) * w[j])) < 1e-14);
    }
}

#[test]
fn factored_and_dense_agree_on_vector_scalar_matrix() {
    let mut rng = seeded(5);
    let f = random_factored(&[8, 8, 8], 5, &mut rng);
    let dense = TensorView::Dense(f.build_dense(DEFAULT_DENSE_BUDGET).unwrap());
    let fac = TensorView::Factored(f.clone());
    let vs: Vec<DVector<f64>> = (0..3).map(|_| gaussian_vector(8, &mut rng)).collect();
    for free in 0..3 {
        let others: Vec<&DVector<f64>> = (0..3).filter(|&m| m != free).map(|m| &vs[m]).collect();
        let x = fac.contract_to_vector(free, &others).unwrap();
        let y = dense.contract_to_vector(free, &others).unwrap();
        assert!(max_abs(&x, &y) < 1e-10);
        assert!(max_abs(&x, &oracle_vector(&f, free, &vs)) < 1e-10);
    }
    let refs: Vec<&DVector<f64>> = vs.iter().collect();
    let s = fac.contract_to_scalar(&refs).unwrap();
    assert!((s - dense.contract_to_scalar(&refs).unwrap()).abs() < 1e-10);
    assert!((s - oracle_scalar(&f, &vs)).abs() < 1e-10);
    for collapsed in 0..3 {
        let m1 = fac.contract_to_matrix(&vs[collapsed], collapsed).unwrap();
        let m2 = dense.contract_to_matrix(&vs[collapsed], collapsed).unwrap();
        assert!((m1 - m2).abs().max() < 1e-10);
    }
}

#[test]
fn scalar_at_own_components_and_zero() {
    let mut rng = seeded(6);
    let vs: Vec<DMatrix<f64>> = (0..3)
        .map(|_| {
            let v = gaussian_vector(5, &mut rng).normalize();
            DMatrix::from_column_slice(5, 1, v.as_slice())
        })
        .collect();
    let t = TensorView::Factored(FactoredTensor::new(vs.clone(), DVector::from_element(1, 3.5)).unwrap());
    let cols: Vec<DVector<f64>> = vs.iter().map(|m| m.column(0).into_owned()).collect();
    let refs: Vec<&DVector<f64>> = cols.iter().collect();
    assert!((t.contract_to_scalar(&refs).unwrap() - 3.5).abs() < 1e-14);
    let zero = DVector::zeros(5);
    assert_eq!(t.contract_to_scalar(&[&zero, refs[1], refs[2]]).unwrap(), 0.0);
}

#[test]
fn slice_matrix_orthonormal_and_zero_theta() {
    let mut rng = seeded(7);
    let (a, b, c) = (orthonormal(6, 3, &mut rng), orthonormal(6, 3, &mut rng), orthonormal(6, 3, &mut rng));
    let t = TensorView::Factored(
        FactoredTensor::new(vec![a.clone(), b.clone(), c.clone()], DVector::from_vec(vec![2.0, 1.0, 1.0])).unwrap(),
    );
    let m = t.contract_to_matrix(&c.column(0).into_owned(), 2).unwrap();
    let expect = a.column(0) * b.column(0).transpose() * 2.0;
    assert!((m - expect).abs().max() < 1e-14);
    let z = t.contract_to_matrix(&DVector::zeros(6), 2).unwrap();
    assert_eq!(z, DMatrix::zeros(6, 6));
}

#[test]
fn slice_matrix_requires_third_order() {
    let mut rng = seeded(8);
    let t = TensorView::Factored(random_factored(&[3, 3, 3, 3], 2, &mut rng));
    assert!(matches!(
        t.contract_to_matrix(&DVector::zeros(3), 2),
        Err(Error::UnsupportedOrder { expected: 3, actual: 4 })
    ));
}

#[test]
fn matricization_identity_with_khatri_rao() {
    let mut rng = seeded(9);
    let f = random_factored(&[4, 4, 4], 3, &mut rng);
    let dense = f.build_dense(1000).unwrap();
    let a = gaussian_vector(4, &mut rng);
    let b = gaussian_vector(4, &mut rng);
    let kr = khatri_rao(
        &DMatrix::from_column_slice(4, 1, b.as_slice()),
        &DMatrix::from_column_slice(4, 1, a.as_slice()),
    )
    .unwrap();
    let lhs = dense.matricize(2).unwrap() * kr.column(0);
    let rhs = TensorView::Dense(dense).contract_to_vector(2, &[&a, &b]).unwrap();
    assert!(max_abs(&lhs, &rhs) < 1e-12);
}

#[test]
fn frobenius_cases() {
    let unit = |d: usize| DMatrix::from_fn(d, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
    let t = TensorView::Factored(FactoredTensor::new(vec![unit(3), unit(4), unit(2)], DVector::from_element(1, 3.0)).unwrap());
    assert!((t.frobenius_norm().unwrap() - 3.0).abs() < 1e-15);
    let z = TensorView::Dense(DenseTensor::zeros(Dims::new(vec![2, 2, 2]).unwrap(), 8).unwrap());
    assert_eq!(z.frobenius_norm().unwrap(), 0.0);

    let mut rng = seeded(10);
    let f = random_factored(&[8, 8, 8], 5, &mut rng);
    let dense = f.build_dense(DEFAULT_DENSE_BUDGET).unwrap();
    let entry_sum = dense.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let fac = TensorView::Factored(f).frobenius_norm().unwrap();
    assert!((fac - entry_sum).abs() <= 1e-10 * entry_sum.max(1.0));
}

#[test]
fn composite_matches_dense_sum() {
    let mut rng = seeded(11);
    let base = random_factored(&[5, 4, 6], 3, &mut rng);
    let noise = DenseTensor::from_vec(
        Dims::new(vec![5, 4, 6]).unwrap(),
        (0..120).map(|_| gaussian_vector(1, &mut rng)[0]).collect(),
    )
    .unwrap();
    let comp = TensorView::composite(base.clone(), Perturbation::Dense(noise.clone())).unwrap();
    let mut full = base.build_dense(1000).unwrap();
    full.add_assign(&noise).unwrap();
    let full = TensorView::Dense(full);
    let vs: Vec<DVector<f64>> = [5, 4, 6].iter().map(|&d| gaussian_vector(d, &mut rng)).collect();
    let loo_c = comp.leave_one_out(&vs.iter().collect::<Vec<_>>()).unwrap();
    let loo_f = full.leave_one_out(&vs.iter().collect::<Vec<_>>()).unwrap();
    for (x, y) in loo_c.iter().zip(&loo_f) {
        assert!(max_abs(x, y) < 1e-10);
    }
    assert!((comp.frobenius_norm().unwrap() - full.frobenius_norm().unwrap()).abs() < 1e-10);

    let noise_f = random_factored(&[5, 4, 6], 2, &mut rng);
    let comp2 = TensorView::composite(base.clone(), Perturbation::Factored(noise_f.clone())).unwrap();
    let mut full2 = base.build_dense(1000).unwrap();
    full2.add_assign(&noise_f.build_dense(1000).unwrap()).unwrap();
    assert!((comp2.frobenius_norm().unwrap() - full2.frobenius_norm()).abs() < 1e-10);

    let wrong = DenseTensor::zeros(Dims::new(vec![5, 4, 5]).unwrap(), 1000).unwrap();
    assert!(TensorView::composite(base, Perturbation::Dense(wrong)).is_err());
}

#[test]
fn batched_columns_match_single_contractions() {
    let mut rng = seeded(12);
    let f = random_factored(&[5, 6, 7], 4, &mut rng);
    let x = gaussian_matrix(5, 3, &mut rng);
    let y = gaussian_matrix(6, 3, &mut rng);
    let dense = TensorView::Dense(f.build_dense(1000).unwrap());
    let fac = TensorView::Factored(f);
    let m1 = fac.contract_columns(2, &[&x, &y]).unwrap();
    let m2 = dense.contract_columns(2, &[&x, &y]).unwrap();
    for i in 0..3 {
        let single = fac
            .contract_to_vector(2, &[&x.column(i).into_owned(), &y.column(i).into_owned()])
            .unwrap();
        assert!(max_abs(&m1.column(i).into_owned(), &single) < 1e-12);
    }
    assert!((m1 - m2).abs().max() < 1e-10);
}

#[test]
fn diagonal_slice_sum_matches_loop() {
    let mut rng = seeded(13);
    let f = random_factored(&[4, 4, 5], 3, &mut rng);
    let dense = f.build_dense(1000).unwrap();
    let mut expect = DVector::zeros(5);
    for k in 0..5 {
        for l in 0..4 {
            expect[k] += dense.get(&[l, l, k]);
        }
    }
    let v = TensorView::Factored(f).diagonal_slice_sum().unwrap();
    assert!(max_abs(&v, &expect) < 1e-12);
    assert!(max_abs(&TensorView::Dense(dense).diagonal_slice_sum().unwrap(), &expect) < 1e-12);
}

#[test]
fn fourth_order_contractions_match_oracle() {
    let mut rng = seeded(14);
    let f = random_factored(&[4, 3, 5, 2], 3, &mut rng);
    let vs: Vec<DVector<f64>> = [4, 3, 5, 2].iter().map(|&d| gaussian_vector(d, &mut rng)).collect();
    let dense = TensorView::Dense(f.build_dense(1000).unwrap());
    let fac = TensorView::Factored(f.clone());
    for free in 0..4 {
        let others: Vec<&DVector<f64>> = (0..4).filter(|&m| m != free).map(|m| &vs[m]).collect();
        let o = oracle_vector(&f, free, &vs);
        assert!(max_abs(&fac.contract_to_vector(free, &others).unwrap(), &o) < 1e-10);
        assert!(max_abs(&dense.contract_to_vector(free, &others).unwrap(), &o) < 1e-10);
    }
}

#[test]
fn spectral_estimate_rank_one_and_orthogonal() {
    let mut rng = seeded(15);
    let cols: Vec<DMatrix<f64>> = (0..3)
        .map(|_| DMatrix::from_column_slice(6, 1, gaussian_vector(6, &mut rng).normalize().as_slice()))
        .collect();
    let t = TensorView::Factored(FactoredTensor::new(cols, DVector::from_element(1, 5.0)).unwrap());
    assert!((t.spectral_norm_estimate(3, 100, &mut rng).unwrap() - 5.0).abs() < 1e-8);

    let (a, b, c) = (orthonormal(6, 2, &mut rng), orthonormal(6, 2, &mut rng), orthonormal(6, 2, &mut rng));
    let t = TensorView::Factored(FactoredTensor::new(vec![a, b, c], DVector::from_vec(vec![3.0, 1.0])).unwrap());
    assert!((t.spectral_norm_estimate(20, 100, &mut rng).unwrap() - 3.0).abs() < 1e-8);

    let z = TensorView::Dense(DenseTensor::zeros(Dims::new(vec![3, 3, 3]).unwrap(), 27).unwrap());
    assert_eq!(z.spectral_norm_estimate(2, 10, &mut rng).unwrap(), 0.0);
}

/// Independent maximizer: random restarts of Gauss-Seidel ALS written directly
/// on the dense array.
fn dense_spectral_oracle(t: &DenseTensor, restarts: usize, rng: &mut Rng) -> f64 {
    let d = t.dims().as_slice().to_vec();
    let mut best = 0.0_f64;
    for _ in 0..restarts {
        let mut u = gaussian_vector(d[0], rng).normalize();
        let mut v = gaussian_vector(d[1], rng).normalize();
        let mut w = gaussian_vector(d[2], rng).normalize();
        for _ in 0..200 {
            let mut nu = DVector::zeros(d[0]);
            for idx in multi_indices(&d) {
                nu[idx[0]] += t.get(&idx) * v[idx[1]] * w[idx[2]];
            }
            u = nu.normalize();
            let mut nv = DVector::zeros(d[1]);
            for idx in multi_indices(&d) {
                nv[idx[1]] += t.get(&idx) * u[idx[0]] * w[idx[2]];
            }
            v = nv.normalize();
            let mut nw = DVector::zeros(d[2]);
            for idx in multi_indices(&d) {
                nw[idx[2]] += t.get(&idx) * u[idx[0]] * v[idx[1]];
            }
            w = nw.normalize();
        }
        let val: f64 = multi_indices(&d).iter().map(|i| t.get(i) * u[i[0]] * v[i[1]] * w[i[2]]).sum();
        best = best.max(val.abs());
    }
    best
}

#[test]
fn spectral_estimate_close_to_heavy_oracle() {
    let mut rng = seeded(16);
    let f = random_factored(&[6, 6, 6], 3, &mut rng);
    let dense = f.build_dense(1000).unwrap();
    // 10^4 restarts in the oracle is slow in a plain triple loop; 400 restarts
    // of 200 sweeps already saturates at this size.
    let oracle = dense_spectral_oracle(&dense, 400, &mut seeded(99));
    let est = TensorView::Factored(f).spectral_norm_estimate(50, 100, &mut rng).unwrap();
    assert!(est <= oracle + 1e-8, "est {est} oracle {oracle}");
    assert!(est >= 0.99 * oracle, "est {est} oracle {oracle}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn multilinear_in_each_argument(seed in 0u64..10_000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = seeded(seed);
        let t = TensorView::Factored(random_factored(&[4, 5, 3], 3, &mut rng));
        let base: Vec<DVector<f64>> = [4, 5, 3].iter().map(|&d| gaussian_vector(d, &mut rng)).collect();
        for mode in 0..3 {
            let x = gaussian_vector(base[mode].len(), &mut rng);
            let y = gaussian_vector(base[mode].len(), &mut rng);
            let eval = |v: &DVector<f64>| {
                let mut vs = base.clone();
                vs[mode] = v.clone();
                t.contract_to_scalar(&vs.iter().collect::<Vec<_>>()).unwrap()
            };
            let combo = &x * alpha + &y * beta;
            let lhs = eval(&combo);
            let rhs = alpha * eval(&x) + beta * eval(&y);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn spectral_estimate_below_frobenius_and_weight_sum(seed in 0u64..10_000) {
        let mut rng = seeded(seed);
        let f = random_factored(&[5, 5, 5], 3, &mut rng);
        let (fac, w) = f.into_parts();
        let f = FactoredTensor::canonical(fac, w).unwrap();
        let wsum = f.weights().sum();
        let t = TensorView::Factored(f);
        let est = t.spectral_norm_estimate(5, 50, &mut rng).unwrap();
        prop_assert!(est <= t.frobenius_norm().unwrap() + 1e-10);
        prop_assert!(est <= wsum + 1e-10);
    }

    #[test]
    fn factored_file_round_trip(seed in 0u64..10_000) {
        let mut rng = seeded(seed);
        let f = random_factored(&[3, 4, 2], 2, &mut rng);
        let text = altcp::tensor::io::factored_to_string(&f);
        let back = altcp::tensor::io::factored_from_str(&text).unwrap();
        for r in 0..3 {
            prop_assert!((back.factor(r) - f.factor(r)).abs().max() == 0.0);
        }
        prop_assert!((back.weights() - f.weights()).abs().max() == 0.0);
    }
}
