use nalgebra::{DMatrix, DVector};

use super::{DenseTensor, Dims, FactoredTensor};
use crate::error::{Error, Result};
use crate::linalg::normalized;
use crate::rng::{gaussian_vector, Rng};

/// Additive perturbation carried by a composite view.
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    Dense(DenseTensor),
    Factored(FactoredTensor),
}

impl Perturbation {
    pub fn dims(&self) -> &Dims {
        match self {
            Perturbation::Dense(t) => t.dims(),
            Perturbation::Factored(t) => t.dims(),
        }
    }

    fn as_view_ref(&self) -> ViewRef<'_> {
        match self {
            Perturbation::Dense(t) => ViewRef::Dense(t),
            Perturbation::Factored(t) => ViewRef::Factored(t),
        }
    }
}

/// Uniform contraction interface over dense, factored, and factored-plus-
/// perturbation tensors. Factored paths never materialize the full array.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorView {
    Dense(DenseTensor),
    Factored(FactoredTensor),
    Composite {
        base: FactoredTensor,
        perturbation: Perturbation,
    },
}

#[derive(Clone, Copy)]
enum ViewRef<'a> {
    Dense(&'a DenseTensor),
    Factored(&'a FactoredTensor),
}

impl ViewRef<'_> {
    fn contract_to_vector(self, free: usize, others: &[&DVector<f64>]) -> Result<DVector<f64>> {
        match self {
            ViewRef::Dense(t) => t.contract_to_vector(free, others),
            ViewRef::Factored(t) => t.contract_to_vector(free, others),
        }
    }

    fn contract_to_scalar(self, vectors: &[&DVector<f64>]) -> Result<f64> {
        match self {
            ViewRef::Dense(t) => t.contract_to_scalar(vectors),
            ViewRef::Factored(t) => t.contract_to_scalar(vectors),
        }
    }

    fn contract_to_matrix(self, theta: &DVector<f64>, collapsed: usize) -> Result<DMatrix<f64>> {
        match self {
            ViewRef::Dense(t) => t.contract_to_matrix(theta, collapsed),
            ViewRef::Factored(t) => t.contract_to_matrix(theta, collapsed),
        }
    }

    fn leave_one_out(self, vectors: &[&DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        match self {
            ViewRef::Factored(t) => t.leave_one_out(vectors),
            ViewRef::Dense(t) => {
                let p = t.order();
                if vectors.len() != p {
                    return Err(Error::shape(format!("expected {p} vectors, got {}", vectors.len())));
                }
                (0..p)
                    .map(|free| {
                        let others: Vec<&DVector<f64>> =
                            (0..p).filter(|&m| m != free).map(|m| vectors[m]).collect();
                        t.contract_to_vector(free, &others)
                    })
                    .collect()
            }
        }
    }

    fn contract_columns(self, target: usize, mats: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
        match self {
            ViewRef::Factored(t) => t.contract_columns(target, mats),
            ViewRef::Dense(t) => {
                let p = t.order();
                if target >= p || mats.len() != p - 1 {
                    return Err(Error::shape("contract_columns needs p-1 matrices"));
                }
                let ncols = mats.first().map(|m| m.ncols()).unwrap_or(0);
                let mut out = DMatrix::zeros(t.dims().get(target), ncols);
                for i in 0..ncols {
                    let cols: Vec<DVector<f64>> = mats.iter().map(|m| m.column(i).into_owned()).collect();
                    let refs: Vec<&DVector<f64>> = cols.iter().collect();
                    out.set_column(i, &t.contract_to_vector(target, &refs)?);
                }
                Ok(out)
            }
        }
    }

    fn diagonal_slice_sum(self) -> Result<DVector<f64>> {
        match self {
            ViewRef::Dense(t) => t.diagonal_slice_sum(),
            ViewRef::Factored(t) => t.diagonal_slice_sum(),
        }
    }
}

impl TensorView {
    /// Pairs a factored base with a perturbation of matching dims.
    pub fn composite(base: FactoredTensor, perturbation: Perturbation) -> Result<Self> {
        if base.dims() != perturbation.dims() {
            return Err(Error::shape(format!(
                "composite dims differ: {} vs {}",
                base.dims(),
                perturbation.dims()
            )));
        }
        Ok(TensorView::Composite { base, perturbation })
    }

    pub fn dims(&self) -> &Dims {
        match self {
            TensorView::Dense(t) => t.dims(),
            TensorView::Factored(t) => t.dims(),
            TensorView::Composite { base, .. } => base.dims(),
        }
    }

    pub fn order(&self) -> usize {
        self.dims().order()
    }

    /// Whether the underlying tensor was built as symmetric.
    pub fn is_symmetric(&self) -> bool {
        match self {
            TensorView::Dense(t) => is_dense_symmetric(t),
            TensorView::Factored(t) => t.is_symmetric(),
            TensorView::Composite { base, perturbation } => {
                base.is_symmetric()
                    && match perturbation {
                        Perturbation::Dense(t) => is_dense_symmetric(t),
                        Perturbation::Factored(t) => t.is_symmetric(),
                    }
            }
        }
    }

    fn parts(&self) -> (ViewRef<'_>, Option<ViewRef<'_>>) {
        match self {
            TensorView::Dense(t) => (ViewRef::Dense(t), None),
            TensorView::Factored(t) => (ViewRef::Factored(t), None),
            TensorView::Composite { base, perturbation } => (ViewRef::Factored(base), Some(perturbation.as_view_ref())),
        }
    }

    /// `T(v_1, .., I_free, .., v_p)`. `others` holds the p−1 vectors in mode
    /// order with the free mode skipped.
    pub fn contract_to_vector(&self, free: usize, others: &[&DVector<f64>]) -> Result<DVector<f64>> {
        let (main, extra) = self.parts();
        let mut v = main.contract_to_vector(free, others)?;
        if let Some(e) = extra {
            v += e.contract_to_vector(free, others)?;
        }
        Ok(v)
    }

    /// The multilinear form `T(v_1, .., v_p)`.
    pub fn contract_to_scalar(&self, vectors: &[&DVector<f64>]) -> Result<f64> {
        let (main, extra) = self.parts();
        let mut s = main.contract_to_scalar(vectors)?;
        if let Some(e) = extra {
            s += e.contract_to_scalar(vectors)?;
        }
        Ok(s)
    }

    /// Slice combination `T(.., θ at collapsed, ..)` of a third-order tensor.
    pub fn contract_to_matrix(&self, theta: &DVector<f64>, collapsed: usize) -> Result<DMatrix<f64>> {
        let (main, extra) = self.parts();
        let mut m = main.contract_to_matrix(theta, collapsed)?;
        if let Some(e) = extra {
            m += e.contract_to_matrix(theta, collapsed)?;
        }
        Ok(m)
    }

    /// Every leave-one-out contraction from the same vectors; entry `r` equals
    /// `contract_to_vector(r, vectors without r)`.
    pub fn leave_one_out(&self, vectors: &[&DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let (main, extra) = self.parts();
        let mut out = main.leave_one_out(vectors)?;
        if let Some(e) = extra {
            for (o, x) in out.iter_mut().zip(e.leave_one_out(vectors)?) {
                *o += x;
            }
        }
        Ok(out)
    }

    /// Batched contraction: column `i` of the result is the contraction of the
    /// `i`-th columns of `mats` (one matrix per non-target mode, in mode order).
    pub fn contract_columns(&self, target: usize, mats: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
        let (main, extra) = self.parts();
        let mut out = main.contract_columns(target, mats)?;
        if let Some(e) = extra {
            out += e.contract_columns(target, mats)?;
        }
        Ok(out)
    }

    /// Σ_l T(e_l, e_l, I) for third-order tensors with d_1 = d_2.
    pub fn diagonal_slice_sum(&self) -> Result<DVector<f64>> {
        let (main, extra) = self.parts();
        let mut v = main.diagonal_slice_sum()?;
        if let Some(e) = extra {
            v += e.diagonal_slice_sum()?;
        }
        Ok(v)
    }

    pub fn frobenius_norm(&self) -> Result<f64> {
        Ok(match self {
            TensorView::Dense(t) => t.frobenius_norm(),
            TensorView::Factored(t) => t.frobenius_sq().sqrt(),
            TensorView::Composite { base, perturbation } => {
                let (cross, pert_sq) = match perturbation {
                    Perturbation::Dense(n) => (base.inner_dense(n)?, n.frobenius_norm().powi(2)),
                    Perturbation::Factored(n) => (base.inner_factored(n)?, n.frobenius_sq()),
                };
                (base.frobenius_sq() + 2.0 * cross + pert_sq).max(0.0).sqrt()
            }
        })
    }

    /// Lower-bound estimate of the tensor spectral norm `sup |T(u_1, .., u_p)|`
    /// over unit vectors: best value over `restarts` random starts of
    /// alternating rank-1 maximization, each run for at most `iters` sweeps.
    pub fn spectral_norm_estimate(&self, restarts: usize, iters: usize, rng: &mut Rng) -> Result<f64> {
        let dims = self.dims().as_slice().to_vec();
        let p = dims.len();
        let mut best = 0.0_f64;
        for _ in 0..restarts.max(1) {
            let mut vs: Vec<DVector<f64>> = dims
                .iter()
                .map(|&d| normalized(&gaussian_vector(d, rng)).map(|(v, _)| v).unwrap_or_else(|| DVector::zeros(d)))
                .collect();
            let mut value = 0.0_f64;
            for _ in 0..iters.max(1) {
                let mut degenerate = false;
                for r in 0..p {
                    let others: Vec<&DVector<f64>> = (0..p).filter(|&m| m != r).map(|m| &vs[m]).collect();
                    match normalized(&self.contract_to_vector(r, &others)?) {
                        Some((v, _)) => vs[r] = v,
                        None => {
                            degenerate = true;
                            break;
                        }
                    }
                }
                if degenerate {
                    break;
                }
                let refs: Vec<&DVector<f64>> = vs.iter().collect();
                let next = self.contract_to_scalar(&refs)?.abs();
                let done = (next - value).abs() <= 1e-14 * next.max(1e-300);
                value = value.max(next);
                if done {
                    break;
                }
            }
            best = best.max(value);
        }
        Ok(best)
    }

    /// Dense materialization, subject to `budget` entries.
    pub fn to_dense(&self, budget: usize) -> Result<DenseTensor> {
        match self {
            TensorView::Dense(t) => {
                t.dims().check_budget(budget)?;
                Ok(t.clone())
            }
            TensorView::Factored(t) => t.build_dense(budget),
            TensorView::Composite { base, perturbation } => {
                let mut d = base.build_dense(budget)?;
                match perturbation {
                    Perturbation::Dense(n) => d.add_assign(n)?,
                    Perturbation::Factored(n) => d.add_assign(&n.build_dense(budget)?)?,
                }
                Ok(d)
            }
        }
    }
}

fn is_dense_symmetric(t: &DenseTensor) -> bool {
    let dims = t.dims().as_slice();
    if dims.len() != 3 || dims.iter().any(|&d| d != dims[0]) {
        return false;
    }
    let d = dims[0];
    let scale = t.as_slice().iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1.0);
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                let x = t.get(&[i, j, k]);
                for perm in [[j, i, k], [i, k, j], [k, j, i]] {
                    if (x - t.get(&perm)).abs() > 1e-12 * scale {
                        return false;
                    }
                }
            }
        }
    }
    true
}
