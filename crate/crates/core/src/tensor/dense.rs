use nalgebra::{DMatrix, DVector};

use super::Dims;
use crate::error::{Error, Result};

/// Explicit p-way array, mode 1 fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Dims,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(dims: Dims, budget: usize) -> Result<Self> {
        let n = dims.check_budget(budget)?;
        Ok(DenseTensor {
            dims,
            data: vec![0.0; n],
        })
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        let expected = dims.entry_count();
        if data.len() as u128 != expected {
            return Err(Error::shape(format!(
                "dense tensor {dims} needs {expected} entries, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::shape(format!("entry {i} is not finite")));
        }
        Ok(DenseTensor { dims, data })
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.order()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn linear_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.order());
        let mut lin = 0;
        for (r, &i) in index.iter().enumerate().rev() {
            lin = lin * self.dims.get(r) + i;
        }
        lin
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.linear_index(index)]
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Mode-r matricization, `d_r × Π_{s≠r} d_s`. Column index linearizes the
    /// remaining modes in increasing order with the lowest mode fastest.
    pub fn matricize(&self, mode: usize) -> Result<DMatrix<f64>> {
        let dims = self.dims.as_slice();
        if mode >= dims.len() {
            return Err(Error::shape(format!("mode {} out of range", mode + 1)));
        }
        let inner: usize = dims[..mode].iter().product();
        let dr = dims[mode];
        let outer: usize = dims[mode + 1..].iter().product();
        let mut m = DMatrix::zeros(dr, inner * outer);
        for o in 0..outer {
            for i in 0..dr {
                let base = (o * dr + i) * inner;
                for j in 0..inner {
                    m[(i, j + inner * o)] = self.data[base + j];
                }
            }
        }
        Ok(m)
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

    /// `T(v_1, .., I_free, .., v_p)`; `others` lists the p−1 vectors in mode
    /// order with the free mode skipped.
    pub fn contract_to_vector(&self, free: usize, others: &[&DVector<f64>]) -> Result<DVector<f64>> {
        let p = self.order();
        if free >= p || others.len() != p - 1 {
            return Err(Error::shape(format!(
                "free mode {} with {} vectors for order {p}",
                free + 1,
                others.len()
            )));
        }
        let mut dims: Vec<usize> = self.dims.as_slice().to_vec();
        let mut data: Option<Vec<f64>> = None;
        for mode in (0..p).rev().filter(|&m| m != free) {
            let v = others[if mode < free { mode } else { mode - 1 }];
            self.check_vector(mode, v)?;
            let src = data.as_deref().unwrap_or(&self.data);
            let (nd, nv) = contract_mode(&dims, src, mode, v.as_slice());
            dims = nd;
            data = Some(nv);
        }
        Ok(DVector::from_vec(data.unwrap_or_default()))
    }

    pub fn contract_to_scalar(&self, vectors: &[&DVector<f64>]) -> Result<f64> {
        let p = self.order();
        if vectors.len() != p {
            return Err(Error::shape(format!("expected {p} vectors, got {}", vectors.len())));
        }
        let v = self.contract_to_vector(0, &vectors[1..])?;
        self.check_vector(0, vectors[0])?;
        Ok(v.dot(vectors[0]))
    }

    /// Third-order only: contracts `collapsed` with `theta`, leaving the
    /// remaining two modes (in increasing order) as rows and columns.
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
        let (nd, data) = contract_mode(self.dims.as_slice(), &self.data, collapsed, theta.as_slice());
        Ok(DMatrix::from_vec(nd[0], nd[1], data))
    }

    /// Σ_l T(e_l, e_l, I) for a third-order tensor with d_1 = d_2.
    pub fn diagonal_slice_sum(&self) -> Result<DVector<f64>> {
        let dims = self.dims.as_slice();
        if dims.len() != 3 || dims[0] != dims[1] {
            return Err(Error::shape("diagonal slice sum needs order 3 with d_1 = d_2"));
        }
        let (d, d3) = (dims[0], dims[2]);
        Ok(DVector::from_iterator(
            d3,
            (0..d3).map(|k| (0..d).map(|l| self.data[l + d * (l + d * k)]).sum()),
        ))
    }

    pub fn add_assign(&mut self, other: &DenseTensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!("dims {} vs {}", self.dims, other.dims)));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// Contracts mode `r` of a mode-1-fastest array against `v`.
pub(crate) fn contract_mode(dims: &[usize], data: &[f64], r: usize, v: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let inner: usize = dims[..r].iter().product();
    let dr = dims[r];
    let outer: usize = dims[r + 1..].iter().product();
    let mut out = vec![0.0; inner * outer];
    if inner == 1 {
        for (o, slot) in out.iter_mut().enumerate() {
            let fiber = &data[o * dr..(o + 1) * dr];
            *slot = fiber.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    } else {
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (i, &s) in v.iter().enumerate() {
                if s == 0.0 {
                    continue;
                }
                let src = &data[(o * dr + i) * inner..(o * dr + i + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, x)| *d += s * x);
            }
        }
    }
    let mut nd = dims.to_vec();
    nd.remove(r);
    (nd, out)
}
