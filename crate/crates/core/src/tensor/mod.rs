//! Order-p tensors in dense and factored form, and the multilinear contractions
//! every other module is written against.
//!
//! Dense entries are linearized with mode 1 fastest: entry `(i_1, .., i_p)`
//! lives at `i_1 + d_1 (i_2 + d_2 (i_3 + ..))`. The Khatri-Rao product and
//! matricization follow the same convention, so that for third-order tensors
//! `mat(T, 3) · (b ⊙ a) = T(a, b, I)` holds literally.

mod dense;
mod factored;
pub mod io;
mod kernels;
mod view;

pub use dense::DenseTensor;
pub use factored::FactoredTensor;
pub use kernels::{hadamard, khatri_rao};
pub use view::{Perturbation, TensorView};

use crate::error::{Error, Result};

/// Default cap on the number of entries a dense tensor may hold (2^27).
pub const DEFAULT_DENSE_BUDGET: usize = 1 << 27;

/// Per-mode dimensions of an order-p tensor, p ≥ 3.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Dims(Vec<usize>);

impl Dims {
    pub fn new(per_mode: Vec<usize>) -> Result<Self> {
        if per_mode.len() < 3 {
            return Err(Error::shape(format!(
                "tensor order must be at least 3, got {}",
                per_mode.len()
            )));
        }
        if let Some(r) = per_mode.iter().position(|&d| d == 0) {
            return Err(Error::shape(format!("mode {} has zero dimension", r + 1)));
        }
        Ok(Dims(per_mode))
    }

    /// `p` copies of `d`.
    pub fn cubical(d: usize, order: usize) -> Result<Self> {
        Dims::new(vec![d; order])
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, mode: usize) -> usize {
        self.0[mode]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Number of entries of the dense tensor with these dims.
    pub fn entry_count(&self) -> u128 {
        self.0.iter().map(|&d| d as u128).product()
    }

    pub fn max_dim(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub(crate) fn check_budget(&self, budget: usize) -> Result<usize> {
        let required = self.entry_count();
        if required > budget as u128 {
            Err(Error::Capacity { required, budget })
        } else {
            Ok(required as usize)
        }
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_validation() {
        assert!(Dims::new(vec![3, 3]).is_err());
        assert!(Dims::new(vec![3, 0, 3]).is_err());
        let d = Dims::new(vec![2, 3, 4]).unwrap();
        assert_eq!(d.entry_count(), 24);
        assert_eq!(d.to_string(), "2x3x4");
        assert!(matches!(
            Dims::cubical(1000, 3).unwrap().check_budget(1 << 27),
            Err(Error::Capacity { required: 1_000_000_000, .. })
        ));
    }
}
