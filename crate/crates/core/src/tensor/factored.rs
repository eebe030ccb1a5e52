use nalgebra::{DMatrix, DVector};

use super::{DenseTensor, Dims};
use crate::error::{Error, Result};

/// Weighted sum of k rank-1 terms `Σ_j w_j a_(1),j ⊗ .. ⊗ a_(p),j`.
///
/// Both the ground truth and decomposition outputs use this shape. Factor `r`
/// is a `d_r × k` matrix; `weights` has length `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredTensor {
    dims: Dims,
    factors: Vec<DMatrix<f64>>,
    weights: DVector<f64>,
    normalized: bool,
    symmetric: bool,
}

/// Column norm tolerance for the `normalized` flag.
const UNIT_TOL: f64 = 1e-12;

impl FactoredTensor {
    /// Builds from raw factors and weights. Weights may carry any sign; use
    /// [`FactoredTensor::canonical`] for unit columns and positive weights.
    pub fn new(factors: Vec<DMatrix<f64>>, weights: DVector<f64>) -> Result<Self> {
        let dims = Dims::new(factors.iter().map(|f| f.nrows()).collect())?;
        let k = weights.len();
        if k == 0 {
            return Err(Error::shape("rank must be positive"));
        }
        for (r, f) in factors.iter().enumerate() {
            if f.ncols() != k {
                return Err(Error::shape(format!(
                    "factor {} has {} columns, rank is {k}",
                    r + 1,
                    f.ncols()
                )));
            }
        }
        if factors.iter().any(|f| f.iter().any(|x| !x.is_finite())) || weights.iter().any(|x| !x.is_finite()) {
            return Err(Error::shape("factors and weights must be finite"));
        }
        let normalized = factors
            .iter()
            .all(|f| f.column_iter().all(|c| (c.norm() - 1.0).abs() <= UNIT_TOL));
        Ok(FactoredTensor {
            dims,
            factors,
            weights,
            normalized,
            symmetric: false,
        })
    }

    /// Normalizes every column, folds the norms into the weights, and makes
    /// every weight positive by flipping the sign of the mode-1 column.
    pub fn canonical(mut factors: Vec<DMatrix<f64>>, mut weights: DVector<f64>) -> Result<Self> {
        for f in factors.iter_mut() {
            for (j, mut col) in f.column_iter_mut().enumerate() {
                let n = col.norm();
                if n <= crate::linalg::DEGENERATE_NORM {
                    return Err(Error::Degenerate(format!("column {} has zero norm", j + 1)));
                }
                col /= n;
                weights[j] *= n;
            }
        }
        for j in 0..weights.len() {
            if weights[j] < 0.0 {
                weights[j] = -weights[j];
                if let Some(f) = factors.first_mut() {
                    f.column_mut(j).neg_mut();
                }
            }
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Degenerate("zero weight after canonicalization".into()));
        }
        let mut t = FactoredTensor::new(factors, weights)?;
        t.normalized = true;
        Ok(t)
    }

    /// `Σ_j w_j a_j^{⊗p}` with the same factor on every mode.
    pub fn symmetric(factor: DMatrix<f64>, weights: DVector<f64>, order: usize) -> Result<Self> {
        let mut t = FactoredTensor::new(vec![factor; order], weights)?;
        t.symmetric = true;
        Ok(t)
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.order()
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn factor(&self, mode: usize) -> &DMatrix<f64> {
        &self.factors[mode]
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn w_max(&self) -> f64 {
        self.weights.max()
    }

    pub fn w_min(&self) -> f64 {
        self.weights.min()
    }

    pub fn gram(&self, mode: usize) -> DMatrix<f64> {
        self.factors[mode].transpose() * &self.factors[mode]
    }

    /// Consumes the tensor and returns factors and weights.
    pub fn into_parts(self) -> (Vec<DMatrix<f64>>, DVector<f64>) {
        (self.factors, self.weights)
    }

    /// Materializes `Σ_j w_j Π_r A_(r)(i_r, j)` as a dense array.
    pub fn build_dense(&self, budget: usize) -> Result<DenseTensor> {
        let mut t = DenseTensor::zeros(self.dims.clone(), budget)?;
        let dims = self.dims.as_slice().to_vec();
        let data = t.as_mut_slice();
        let mut block: Vec<f64> = Vec::with_capacity(data.len());
        for j in 0..self.rank() {
            // outer product built mode by mode, mode 1 fastest
            block.clear();
            block.extend(self.factors[0].column(j).iter().map(|x| x * self.weights[j]));
            for (r, &d) in dims.iter().enumerate().skip(1) {
                let prev = block.len();
                let col = self.factors[r].column(j);
                block.resize(prev * d, 0.0);
                for i in (0..d).rev() {
                    let s = col[i];
                    for l in 0..prev {
                        block[i * prev + l] = block[l] * s;
                    }
                }
            }
            data.iter_mut().zip(&block).for_each(|(x, y)| *x += y);
        }
        Ok(t)
    }

    fn check_vector(&self, mode: usize, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dims.get(mode) {
            return Err(Error::shape(format!(
                "mode {} expects length {}, got {}",
                mode + 1,
                self.dims.get(mode),
                v.len()
            )));
        }
        Ok(())
    }

    pub fn contract_to_vector(&self, free: usize, others: &[&DVector<f64>]) -> Result<DVector<f64>> {
        let p = self.order();
        if free >= p || others.len() != p - 1 {
            return Err(Error::shape(format!(
                "free mode {} with {} vectors for order {p}",
                free + 1,
                others.len()
            )));
        }
        let mut h = self.weights.clone();
        for (slot, mode) in (0..p).filter(|&m| m != free).enumerate() {
            self.check_vector(mode, others[slot])?;
            h.component_mul_assign(&self.factors[mode].tr_mul(others[slot]));
        }
        Ok(&self.factors[free] * h)
    }

    pub fn contract_to_scalar(&self, vectors: &[&DVector<f64>]) -> Result<f64> {
        let p = self.order();
        if vectors.len() != p {
            return Err(Error::shape(format!("expected {p} vectors, got {}", vectors.len())));
        }
        let mut h = self.weights.clone();
        for (mode, v) in vectors.iter().enumerate() {
            self.check_vector(mode, v)?;
            h.component_mul_assign(&self.factors[mode].tr_mul(v));
        }
        Ok(h.sum())
    }

    /// All p leave-one-out contractions `T(v_1, .., I_r, .., v_p)` from one
    /// set of vectors, sharing the `A_(s)ᵀ v_s` projections.
    pub fn leave_one_out(&self, vectors: &[&DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let p = self.order();
        if vectors.len() != p {
            return Err(Error::shape(format!("expected {p} vectors, got {}", vectors.len())));
        }
        for (mode, v) in vectors.iter().enumerate() {
            self.check_vector(mode, v)?;
        }
        let proj: Vec<DVector<f64>> = (0..p).map(|m| self.factors[m].tr_mul(vectors[m])).collect();
        Ok((0..p)
            .map(|free| {
                let mut h = self.weights.clone();
                for (_, g) in proj.iter().enumerate().filter(|(m, _)| *m != free) {
                    h.component_mul_assign(g);
                }
                &self.factors[free] * h
            })
            .collect())
    }

    /// Column `i` of the result is `T(M_s[:, i] for s ≠ target, I_target)`.
    pub fn contract_columns(&self, target: usize, mats: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
        let p = self.order();
        if target >= p || mats.len() != p - 1 {
            return Err(Error::shape("contract_columns needs p-1 matrices"));
        }
        let ncols = mats.first().map(|m| m.ncols()).unwrap_or(0);
        let mut h = DMatrix::from_fn(self.rank(), ncols, |j, _| self.weights[j]);
        for (slot, mode) in (0..p).filter(|&m| m != target).enumerate() {
            let m = mats[slot];
            if m.nrows() != self.dims.get(mode) || m.ncols() != ncols {
                return Err(Error::shape(format!("matrix for mode {} has wrong shape", mode + 1)));
            }
            h.component_mul_assign(&self.factors[mode].tr_mul(m));
        }
        Ok(&self.factors[target] * h)
    }

    pub fn contract_to_matrix(&self, theta: &DVector<f64>, collapsed: usize) -> Result<DMatrix<f64>> {
        if self.order() != 3 {
            return Err(Error::UnsupportedOrder {
                expected: 3,
                actual: self.order(),
            });
        }
        if collapsed >= 3 {
            return Err(Error::shape(format!("mode {} out of range", collapsed + 1)));
        }
        self.check_vector(collapsed, theta)?;
        let lambda = self.factors[collapsed].tr_mul(theta).component_mul(&self.weights);
        let rest: Vec<usize> = (0..3).filter(|&m| m != collapsed).collect();
        let left = &self.factors[rest[0]];
        let right = &self.factors[rest[1]];
        let mut scaled = left.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= lambda[j];
        }
        Ok(scaled * right.transpose())
    }

    /// λ = diag(w) A_(mode)ᵀ θ, the slice weights of `T(.., θ at mode, ..)`.
    pub fn slice_weights(&self, theta: &DVector<f64>, mode: usize) -> Result<DVector<f64>> {
        self.check_vector(mode, theta)?;
        Ok(self.factors[mode].tr_mul(theta).component_mul(&self.weights))
    }

    /// Squared Frobenius norm via `wᵀ [∗_r A_(r)ᵀA_(r)] w`.
    pub fn frobenius_sq(&self) -> f64 {
        let k = self.rank();
        let mut g = DMatrix::from_element(k, k, 1.0);
        for f in &self.factors {
            g.component_mul_assign(&f.tr_mul(f));
        }
        (self.weights.transpose() * g * &self.weights)[(0, 0)].max(0.0)
    }

    /// ⟨self, other⟩ for two factored tensors of equal dims.
    pub fn inner_factored(&self, other: &FactoredTensor) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::shape(format!("dims {} vs {}", self.dims, other.dims)));
        }
        let mut g = DMatrix::from_element(self.rank(), other.rank(), 1.0);
        for (a, b) in self.factors.iter().zip(&other.factors) {
            g.component_mul_assign(&a.tr_mul(b));
        }
        Ok((self.weights.transpose() * g * &other.weights)[(0, 0)])
    }

    /// ⟨self, dense⟩ = Σ_j w_j D(a_(1),j, .., a_(p),j).
    pub fn inner_dense(&self, dense: &DenseTensor) -> Result<f64> {
        if &self.dims != dense.dims() {
            return Err(Error::shape(format!("dims {} vs {}", self.dims, dense.dims())));
        }
        let mut total = 0.0;
        for j in 0..self.rank() {
            let cols: Vec<DVector<f64>> = self.factors.iter().map(|f| f.column(j).into_owned()).collect();
            let refs: Vec<&DVector<f64>> = cols.iter().collect();
            total += self.weights[j] * dense.contract_to_scalar(&refs)?;
        }
        Ok(total)
    }

    /// Σ_l T(e_l, e_l, I) for a third-order tensor with d_1 = d_2.
    pub fn diagonal_slice_sum(&self) -> Result<DVector<f64>> {
        let dims = self.dims.as_slice();
        if dims.len() != 3 || dims[0] != dims[1] {
            return Err(Error::shape("diagonal slice sum needs order 3 with d_1 = d_2"));
        }
        let diag: DVector<f64> = DVector::from_iterator(
            self.rank(),
            self.factors[0]
                .column_iter()
                .zip(self.factors[1].column_iter())
                .map(|(a, b)| a.dot(&b)),
        );
        Ok(&self.factors[2] * diag.component_mul(&self.weights))
    }
}
