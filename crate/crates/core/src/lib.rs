//! Guaranteed CP tensor decomposition by alternating rank-1 power updates.
//!
//! The pipeline has two phases. The power phase runs many independent
//! alternating asymmetric power iterations from random or SVD-slice starts
//! and clusters the resulting rank-1 estimates. The refinement phase removes
//! the residual bias left by non-orthogonal components with a coordinate
//! descent sweep over all columns, followed by a spectral projection.
//!
//! Everything is written against [`tensor::TensorView`], so tensors given as
//! factors (plus an optional perturbation) are never materialized.

pub mod decomposition;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod init;
pub mod linalg;
pub mod power;
pub mod refine;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
