use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Column-wise Khatri-Rao product `A ⊙ B` (d_a·d_b × k).
///
/// Row `i_b + d_b · i_a` of column `j` holds `A[i_a, j] · B[i_b, j]`: the
/// second factor's index runs fastest.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::shape(format!(
            "khatri-rao column mismatch: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (da, db, k) = (a.nrows(), b.nrows(), a.ncols());
    let mut out = DMatrix::zeros(da * db, k);
    for j in 0..k {
        let mut col = out.column_mut(j);
        for ia in 0..da {
            let s = a[(ia, j)];
            for ib in 0..db {
                col[ib + db * ia] = s * b[(ib, j)];
            }
        }
    }
    Ok(out)
}

/// Entrywise product.
pub fn hadamard(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "hadamard shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.component_mul(b))
}
