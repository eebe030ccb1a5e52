use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::power::{StopReason, TripleEstimate, UpdateVariant};
use crate::refine::{NicenessParams, SweepRecord};
use crate::tensor::FactoredTensor;

/// Where a component of a [`Decomposition`] came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentMeta {
    pub trial_id: usize,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// Refinement froze this column at least once.
    pub frozen: bool,
}

/// Rank-k estimate: one `d_r × k` matrix per mode plus weights, with the
/// bookkeeping of both phases.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub factors: Vec<DMatrix<f64>>,
    pub weights: DVector<f64>,
    pub components: Vec<ComponentMeta>,
    /// Number of requested components the clustering could not deliver.
    pub shortfall: usize,
    pub variant: UpdateVariant,
    pub trace: Vec<SweepRecord>,
    pub niceness: Option<NicenessParams>,
}

impl Decomposition {
    /// Stacks cluster centers into factor matrices.
    pub fn from_estimates(dims: &[usize], centers: &[TripleEstimate], shortfall: usize, variant: UpdateVariant) -> Self {
        let k = centers.len();
        let factors = dims
            .iter()
            .enumerate()
            .map(|(r, &d)| {
                let mut m = DMatrix::zeros(d, k);
                for (j, c) in centers.iter().enumerate() {
                    m.set_column(j, &c.vectors[r]);
                }
                m
            })
            .collect();
        Decomposition {
            factors,
            weights: DVector::from_iterator(k, centers.iter().map(|c| c.weight)),
            components: centers
                .iter()
                .map(|c| ComponentMeta {
                    trial_id: c.trial_id,
                    iterations: c.iterations,
                    stop_reason: c.stop_reason,
                    frozen: false,
                })
                .collect(),
            shortfall,
            variant,
            trace: Vec::new(),
            niceness: None,
        }
    }

    /// Wraps an existing factored tensor, e.g. the truth itself.
    pub fn from_factored(t: &FactoredTensor) -> Self {
        Decomposition {
            factors: t.factors().to_vec(),
            weights: t.weights().clone(),
            components: (0..t.rank())
                .map(|j| ComponentMeta {
                    trial_id: j,
                    iterations: 0,
                    stop_reason: StopReason::MaxIter,
                    frozen: false,
                })
                .collect(),
            shortfall: 0,
            variant: UpdateVariant::Jacobi,
            trace: Vec::new(),
            niceness: None,
        }
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    /// Column `j` of every mode.
    pub fn component(&self, j: usize) -> Vec<DVector<f64>> {
        self.factors.iter().map(|f| f.column(j).into_owned()).collect()
    }

    pub fn to_factored(&self) -> Result<FactoredTensor> {
        if self.rank() == 0 {
            return Err(Error::Degenerate("decomposition has no components".into()));
        }
        FactoredTensor::new(self.factors.clone(), self.weights.clone())
    }
}
