//! Starting points for the power phase and the slice-gap diagnostics.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{normalized, top_singular_pair};
use crate::rng::{gaussian_vector, Rng};
use crate::tensor::{FactoredTensor, TensorView};

pub const DEFAULT_SVD_TOL: f64 = 1e-10;
pub const DEFAULT_SVD_MAX_SWEEPS: usize = 300;
const GAP_ZERO: f64 = 1e-12;
const THETA_REDRAWS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    Random,
    Svd,
}

impl fmt::Display for InitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMethod::Random => "random",
            InitMethod::Svd => "svd",
        })
    }
}

impl FromStr for InitMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(InitMethod::Random),
            "svd" => Ok(InitMethod::Svd),
            other => Err(format!("unknown init method `{other}` (random|svd)")),
        }
    }
}

/// One unit start vector per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct InitVectors {
    pub vectors: Vec<DVector<f64>>,
    pub method: InitMethod,
    pub theta: Option<DVector<f64>>,
}

/// Gaussian draw scaled to the unit sphere.
pub fn random_unit(dim: usize, rng: &mut Rng) -> DVector<f64> {
    assert!(dim >= 1, "random_unit needs dim >= 1");
    loop {
        if let Some((v, _)) = normalized(&gaussian_vector(dim, rng)) {
            return v;
        }
    }
}

pub fn random_init(view: &TensorView, rng: &mut Rng) -> InitVectors {
    InitVectors {
        vectors: view.dims().as_slice().iter().map(|&d| random_unit(d, rng)).collect(),
        method: InitMethod::Random,
        theta: None,
    }
}

/// Slice start: draws θ, takes the top singular pair of `T(I, I, θ)` as the
/// first two modes and one power update for the third. Redraws θ a few times
/// if the slice vanishes.
pub fn svd_init(view: &TensorView, rng: &mut Rng, tol: f64, max_sweeps: usize) -> Result<InitVectors> {
    if view.order() != 3 {
        return Err(Error::UnsupportedOrder {
            expected: 3,
            actual: view.order(),
        });
    }
    let d3 = view.dims().get(2);
    let mut last = None;
    for _ in 0..=THETA_REDRAWS {
        let theta = gaussian_vector(d3, rng);
        match svd_init_with_theta(view, &theta, rng, tol, max_sweeps) {
            Err(e @ Error::Degenerate(_)) => last = Some(e),
            other => return other,
        }
    }
    Err(last.unwrap_or_else(|| Error::Degenerate("slice matrix vanished".into())))
}

/// [`svd_init`] with a caller-chosen θ.
pub fn svd_init_with_theta(
    view: &TensorView,
    theta: &DVector<f64>,
    rng: &mut Rng,
    tol: f64,
    max_sweeps: usize,
) -> Result<InitVectors> {
    if view.order() != 3 {
        return Err(Error::UnsupportedOrder {
            expected: 3,
            actual: view.order(),
        });
    }
    let dims = view.dims().as_slice();
    // M = T(I, I, θ): M v = T(I, v, θ), Mᵀ u = T(u, I, θ)
    let apply = |v: &DVector<f64>| view.contract_to_vector(0, &[v, theta]).expect("dims checked");
    let apply_t = |u: &DVector<f64>| view.contract_to_vector(1, &[u, theta]).expect("dims checked");
    view.contract_to_vector(0, &[&DVector::zeros(dims[1]), theta])?;
    let pair = top_singular_pair(dims[0], dims[1], apply, apply_t, rng, tol, max_sweeps);
    if pair.value <= crate::linalg::DEGENERATE_NORM {
        return Err(Error::Degenerate("slice matrix T(I,I,θ) is zero".into()));
    }
    let (mut a, mut b) = (pair.left, pair.right);
    if a.dot(&apply(&b)) < 0.0 {
        a = -a;
        b = -b;
    }
    let c = normalized(&view.contract_to_vector(2, &[&a, &b])?)
        .ok_or_else(|| Error::Degenerate("third-mode update from slice pair is zero".into()))?
        .0;
    Ok(InitVectors {
        vectors: vec![a, b, c],
        method: InitMethod::Svd,
        theta: Some(theta.clone()),
    })
}

/// Spectrum of the slice `T(I, I, θ)` seen through the true components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitDiagnostics {
    /// `λ_i = w_i ⟨θ, c_i⟩`.
    pub lambda: Vec<f64>,
    pub argmax: usize,
    pub lambda_1: f64,
    pub lambda_2: f64,
    /// `λ₁ / λ₍₂₎`; `f64::MAX` when `λ₍₂₎ ≤ 1e-12 λ₁`.
    pub gap_ratio: f64,
    /// False when every `λ_i` is zero.
    pub gap_defined: bool,
    /// The μ for which `λ₁ = (1 + μ) λ₍₂₎`.
    pub implied_mu: f64,
}

pub fn gap_diagnostics(truth: &FactoredTensor, theta: &DVector<f64>) -> Result<InitDiagnostics> {
    let c = truth.factor(truth.order() - 1);
    if theta.len() != c.nrows() {
        return Err(Error::shape(format!("θ has length {}, expected {}", theta.len(), c.nrows())));
    }
    let lambda: Vec<f64> = (c.transpose() * theta)
        .iter()
        .zip(truth.weights().iter())
        .map(|(x, w)| w * x)
        .collect();
    let mut argmax = 0;
    let (mut l1, mut l2) = (0.0_f64, 0.0_f64);
    for (i, x) in lambda.iter().map(|x| x.abs()).enumerate() {
        if x > l1 {
            l2 = l1;
            l1 = x;
            argmax = i;
        } else if x > l2 {
            l2 = x;
        }
    }
    let gap_defined = l1 > 0.0;
    let gap_ratio = if !gap_defined {
        1.0
    } else if l2 <= GAP_ZERO * l1 {
        f64::MAX
    } else {
        l1 / l2
    };
    Ok(InitDiagnostics {
        lambda,
        argmax,
        lambda_1: l1,
        lambda_2: l2,
        gap_ratio,
        gap_defined,
        implied_mu: if gap_ratio == f64::MAX { f64::MAX } else { gap_ratio - 1.0 },
    })
}

/// `g(L) = √(2 ln L) − (ln ln L + c) / (2√(2 ln L)) − √(2 ln k)`, for `L ≥ 3`.
pub fn trial_gap(l: f64, k: usize, c: f64) -> f64 {
    let s = (2.0 * l.ln()).sqrt();
    s - (l.ln().ln() + c) / (2.0 * s) - (2.0 * (k as f64).ln()).sqrt()
}

/// Right-hand side `γ(1+μ) / (1 − ργ(1+μ)) · 4√(log₂ k)` of the trial-count
/// condition, with `γ = w_max / w_min`.
pub fn trial_requirement(gamma: f64, k: usize, rho: f64, mu: f64) -> Result<f64> {
    let denom = 1.0 - rho * gamma * (1.0 + mu);
    if denom <= 0.0 {
        return Err(Error::Infeasible(format!(
            "μ = {mu} violates μ < w_min/(w_max ρ) − 1 = {}",
            1.0 / (gamma * rho) - 1.0
        )));
    }
    Ok(gamma * (1.0 + mu) / denom * 4.0 * (k as f64).log2().max(0.0).sqrt())
}

/// Smallest integer `L ≥ 3` with `g(L) ≥` [`trial_requirement`].
pub fn theory_trial_count(gamma: f64, k: usize, rho: f64, mu: f64, c: f64) -> Result<u128> {
    if gamma < 1.0 || k == 0 {
        return Err(Error::Precondition(format!("need γ ≥ 1 and k ≥ 1, got γ={gamma}, k={k}")));
    }
    let req = trial_requirement(gamma, k, rho, mu)?;
    let ok = |l: u128| trial_gap(l as f64, k, c) >= req;
    const SCAN: u128 = 16;
    if let Some(l) = (3..SCAN).find(|&l| ok(l)) {
        return Ok(l);
    }
    // g is increasing beyond the scanned range
    let mut hi = SCAN;
    while !ok(hi) {
        hi = hi.checked_mul(2).filter(|h| *h < 1u128 << 120).ok_or_else(|| {
            Error::Infeasible(format!("no L below 2^120 reaches g(L) ≥ {req}"))
        })?;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
