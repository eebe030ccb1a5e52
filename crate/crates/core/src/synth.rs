//! Random instances, noise, and the recovery metrics.

use nalgebra::{DMatrix, DVector};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{gaussian_matrix, stream, Domain, Rng};
use crate::tensor::{DenseTensor, Dims, FactoredTensor, TensorView};

/// Restarts and sweeps used when calibrating noise to a target spectral norm.
pub const NOISE_ESTIMATE_RESTARTS: usize = 8;
pub const NOISE_ESTIMATE_ITERS: usize = 60;

/// A generated instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Unit columns, weights rescaled so that `w_max = 1`.
    pub tensor: FactoredTensor,
    /// Weights as products of the raw column norms, before rescaling.
    pub raw_weights: DVector<f64>,
    pub seed: u64,
    pub recipe: String,
}

fn from_raw(factors: Vec<DMatrix<f64>>, symmetric: bool, seed: u64, recipe: &str) -> Result<GroundTruth> {
    let k = factors[0].ncols();
    let canon = FactoredTensor::canonical(factors, DVector::from_element(k, 1.0))?;
    let (factors, raw) = canon.into_parts();
    let scale = raw.max();
    let weights = &raw / scale;
    let tensor = if symmetric {
        FactoredTensor::symmetric(factors[0].clone(), weights, factors.len())?
    } else {
        FactoredTensor::new(factors, weights)?
    };
    Ok(GroundTruth {
        tensor,
        raw_weights: raw,
        seed,
        recipe: recipe.to_string(),
    })
}

/// I.i.d. standard Gaussian factors with normalized columns; the column norms
/// are aggregated into the weights.
pub fn random_ground_truth(dims: &[usize], k: usize, seed: u64) -> Result<GroundTruth> {
    if k == 0 {
        return Err(Error::Precondition("rank must be positive".into()));
    }
    Dims::new(dims.to_vec())?;
    let mut rng = stream(seed, Domain::Truth, 0);
    let factors = dims.iter().map(|&d| gaussian_matrix(d, k, &mut rng)).collect();
    from_raw(factors, false, seed, "gaussian")
}

/// Symmetric instance `Σ_j w_j a_j^{⊗p}` with one Gaussian factor.
pub fn random_symmetric_truth(d: usize, k: usize, order: usize, seed: u64) -> Result<GroundTruth> {
    if k == 0 {
        return Err(Error::Precondition("rank must be positive".into()));
    }
    let mut rng = stream(seed, Domain::Truth, 0);
    let a = gaussian_matrix(d, k, &mut rng);
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let mut unit = a.clone();
    for (j, mut c) in unit.column_iter_mut().enumerate() {
        c /= norms[j];
    }
    let raw = DVector::from_iterator(k, norms.iter().map(|n| n.powi(order as i32)));
    let tensor = FactoredTensor::symmetric(unit, &raw / raw.max(), order)?;
    Ok(GroundTruth {
        tensor,
        raw_weights: raw,
        seed,
        recipe: "gaussian-symmetric".into(),
    })
}

/// Orthonormal factors (`k ≤ min d_r`) with the given weights.
pub fn orthonormal_truth(dims: &[usize], weights: &DVector<f64>, seed: u64) -> Result<GroundTruth> {
    let k = weights.len();
    if dims.iter().any(|&d| d < k) {
        return Err(Error::Precondition(format!("orthonormal truth needs k ≤ d, got k={k}")));
    }
    let mut rng = stream(seed, Domain::Truth, 0);
    let factors: Vec<DMatrix<f64>> = dims.iter().map(|&d| orthonormal_columns(d, k, &mut rng)).collect();
    Ok(GroundTruth {
        tensor: FactoredTensor::new(factors, weights.clone())?,
        raw_weights: weights.clone(),
        seed,
        recipe: "orthonormal".into(),
    })
}

pub fn orthonormal_columns(d: usize, k: usize, rng: &mut Rng) -> DMatrix<f64> {
    let q = gaussian_matrix(d, k, rng).qr().q();
    q.columns(0, k).into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    DenseGaussian,
    Factored { rank: usize },
}

/// Noise target and the spectral norm reached after calibration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSpec {
    pub target: f64,
    pub kind: NoiseKind,
    pub achieved: f64,
}

fn calibrate(view: &TensorView, target: f64, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, Domain::Estimator, 0);
    let est = view.spectral_norm_estimate(NOISE_ESTIMATE_RESTARTS, NOISE_ESTIMATE_ITERS, &mut rng)?;
    if est <= 0.0 {
        return Err(Error::Degenerate("noise tensor has zero spectral estimate".into()));
    }
    Ok(target / est)
}

/// Re-estimates the spectral norm of a tensor with an independent stream.
pub fn estimate_spectral(view: &TensorView, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, Domain::Estimator, 1);
    view.spectral_norm_estimate(NOISE_ESTIMATE_RESTARTS, NOISE_ESTIMATE_ITERS, &mut rng)
}

/// Dense i.i.d. Gaussian noise rescaled to spectral norm `psi`.
pub fn gaussian_noise(dims: &Dims, psi: f64, seed: u64, budget: usize) -> Result<(DenseTensor, NoiseSpec)> {
    let n = dims.check_budget(budget)?;
    let spec = |achieved| NoiseSpec {
        target: psi,
        kind: NoiseKind::DenseGaussian,
        achieved,
    };
    if psi == 0.0 {
        return Ok((DenseTensor::zeros(dims.clone(), budget)?, spec(0.0)));
    }
    let mut rng = stream(seed, Domain::Noise, 0);
    let raw = gaussian_matrix(n, 1, &mut rng);
    let view = TensorView::Dense(DenseTensor::from_vec(dims.clone(), raw.as_slice().to_vec())?);
    let s = calibrate(&view, psi, seed)?;
    let TensorView::Dense(mut t) = view else { unreachable!() };
    t.scale(s);
    Ok((t, spec(psi)))
}

/// Low-rank Gaussian noise `Σ_{j≤r} g_j ⊗ h_j ⊗ ..` rescaled to spectral norm `psi`.
pub fn factored_noise(dims: &Dims, rank: usize, psi: f64, seed: u64) -> Result<(FactoredTensor, NoiseSpec)> {
    if rank == 0 {
        return Err(Error::Precondition("noise rank must be positive".into()));
    }
    let mut rng = stream(seed, Domain::Noise, 0);
    let factors: Vec<DMatrix<f64>> = dims.as_slice().iter().map(|&d| gaussian_matrix(d, rank, &mut rng)).collect();
    let base = FactoredTensor::new(factors.clone(), DVector::from_element(rank, 1.0))?;
    let s = if psi == 0.0 { 0.0 } else { calibrate(&TensorView::Factored(base), psi, seed)? };
    let t = FactoredTensor::new(factors, DVector::from_element(rank, s))?;
    Ok((
        t,
        NoiseSpec {
            target: psi,
            kind: NoiseKind::Factored { rank },
            achieved: psi,
        },
    ))
}

/// Sine of the angle between `u` and `v`.
pub fn dist(u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("dist of a zero vector".into()));
    }
    let (u, v) = (u / nu, v / nv);
    let r = &u - &v * u.dot(&v);
    Ok(r.norm().min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchStrategy {
    Greedy,
    Optimal,
}

/// One estimate/truth pair, with the estimate's signs resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub estimate: usize,
    pub truth: usize,
    /// Sign applied to each mode of the estimate.
    pub signs: Vec<f64>,
    pub dists: Vec<f64>,
    /// `‖a_r − s_r â_r‖` per mode.
    pub column_errors: Vec<f64>,
    pub square_error: f64,
    pub weight_error: f64,
}

impl MatchedPair {
    pub fn max_dist(&self) -> f64 {
        self.dists.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_estimates: Vec<usize>,
    pub unmatched_truth: Vec<usize>,
}

impl MatchResult {
    /// Pair for truth column `j`, if any.
    pub fn for_truth(&self, j: usize) -> Option<&MatchedPair> {
        self.pairs.iter().find(|p| p.truth == j)
    }
}

/// Signs making every mode except the second positively aligned; the second
/// takes the product of the others so the rank-1 term keeps its sign.
pub fn resolve_signs(est: &[DVector<f64>], truth: &[DVector<f64>]) -> Vec<f64> {
    let p = est.len();
    let mut signs: Vec<f64> = est
        .iter()
        .zip(truth)
        .map(|(e, t)| if e.dot(t) < 0.0 { -1.0 } else { 1.0 })
        .collect();
    if p >= 2 {
        signs[1] = (0..p).filter(|&r| r != 1).map(|r| signs[r]).product();
    }
    signs
}

/// `(1/p) Σ_r ‖a_r − s_r â_r‖²` and `|ŵ − w|² / w²` for one pair.
pub fn score_pair(est: &[DVector<f64>], est_w: f64, truth: &[DVector<f64>], truth_w: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, f64, f64)> {
    let signs = resolve_signs(est, truth);
    let dists = est.iter().zip(truth).map(|(e, t)| dist(e, t)).collect::<Result<Vec<_>>>()?;
    let errs: Vec<f64> = est
        .iter()
        .zip(truth)
        .zip(&signs)
        .map(|((e, t), s)| (t - e * *s).norm())
        .collect();
    let se = square_error(&errs);
    let we = weight_error(est_w, truth_w);
    Ok((signs, dists, errs, se, we))
}

/// Mean of squared per-mode column errors.
pub fn square_error(column_errors: &[f64]) -> f64 {
    column_errors.iter().map(|e| e * e).sum::<f64>() / column_errors.len() as f64
}

pub fn weight_error(est: f64, truth: f64) -> f64 {
    let r = (est - truth) / truth;
    r * r
}

fn columns(factors: &[DMatrix<f64>], j: usize) -> Vec<DVector<f64>> {
    factors.iter().map(|f| f.column(j).into_owned()).collect()
}

/// Matches estimate columns to truth columns by the last-mode correlation.
///
/// Greedy order: descending `|⟨ĉ_i, c_j⟩|`, ties by mode-1 correlation, then
/// by lower indices. Pairs whose largest per-mode dist exceeds `accept_dist`
/// are left unmatched.
pub fn match_components(
    est_factors: &[DMatrix<f64>],
    est_weights: &DVector<f64>,
    truth: &FactoredTensor,
    accept_dist: f64,
    strategy: MatchStrategy,
) -> Result<MatchResult> {
    let p = truth.order();
    if est_factors.len() != p {
        return Err(Error::shape(format!("estimate has {} modes, truth {p}", est_factors.len())));
    }
    for (r, f) in est_factors.iter().enumerate() {
        if f.nrows() != truth.dims().get(r) || f.ncols() != est_weights.len() {
            return Err(Error::shape(format!("estimate factor {} has wrong shape", r + 1)));
        }
    }
    let ke = est_weights.len();
    let kt = truth.rank();
    let corr_last = est_factors[p - 1].tr_mul(truth.factor(p - 1)).abs();
    let corr_first = est_factors[0].tr_mul(truth.factor(0)).abs();
    let assignment: Vec<(usize, usize)> = match strategy {
        MatchStrategy::Greedy => {
            let mut cand: Vec<(usize, usize)> = (0..ke).flat_map(|i| (0..kt).map(move |j| (i, j))).collect();
            cand.sort_by(|&(i1, j1), &(i2, j2)| {
                corr_last[(i2, j2)]
                    .total_cmp(&corr_last[(i1, j1)])
                    .then(corr_first[(i2, j2)].total_cmp(&corr_first[(i1, j1)]))
                    .then(i1.cmp(&i2))
                    .then(j1.cmp(&j2))
            });
            let (mut used_e, mut used_t) = (vec![false; ke], vec![false; kt]);
            let mut out = Vec::new();
            for (i, j) in cand {
                if !used_e[i] && !used_t[j] {
                    used_e[i] = true;
                    used_t[j] = true;
                    out.push((i, j));
                }
            }
            out
        }
        MatchStrategy::Optimal => optimal_assignment(&corr_last),
    };
    let mut pairs = Vec::new();
    let (mut me, mut mt) = (vec![false; ke], vec![false; kt]);
    for (i, j) in assignment {
        let e = columns(est_factors, i);
        let t = columns(truth.factors(), j);
        if e.iter().any(|v| v.norm() == 0.0) {
            continue;
        }
        let (signs, dists, column_errors, square_error, weight_error) = score_pair(&e, est_weights[i], &t, truth.weights()[j])?;
        if dists.iter().copied().fold(0.0, f64::max) > accept_dist {
            continue;
        }
        me[i] = true;
        mt[j] = true;
        pairs.push(MatchedPair {
            estimate: i,
            truth: j,
            signs,
            dists,
            column_errors,
            square_error,
            weight_error,
        });
    }
    pairs.sort_by_key(|p| p.truth);
    Ok(MatchResult {
        pairs,
        unmatched_estimates: (0..ke).filter(|&i| !me[i]).collect(),
        unmatched_truth: (0..kt).filter(|&j| !mt[j]).collect(),
    })
}

/// Assignment maximizing the total correlation.
fn optimal_assignment(corr: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let (ke, kt) = corr.shape();
    if ke == 0 || kt == 0 {
        return Vec::new();
    }
    let scaled = |x: f64| (x * 1e12).round() as i64;
    if ke <= kt {
        let m = Matrix::from_fn(ke, kt, |(i, j)| scaled(corr[(i, j)]));
        let (_, cols) = kuhn_munkres(&m);
        cols.into_iter().enumerate().collect()
    } else {
        let m = Matrix::from_fn(kt, ke, |(j, i)| scaled(corr[(i, j)]));
        let (_, rows) = kuhn_munkres(&m);
        rows.into_iter().enumerate().map(|(j, i)| (i, j)).collect()
    }
}

/// Closest truth component to a single estimate, by the smallest worst-mode
/// dist.
pub fn nearest_component(est: &[DVector<f64>], est_w: f64, truth: &FactoredTensor) -> Result<MatchedPair> {
    let mut best: Option<MatchedPair> = None;
    for j in 0..truth.rank() {
        let t = columns(truth.factors(), j);
        let (signs, dists, column_errors, square_error, weight_error) = score_pair(est, est_w, &t, truth.weights()[j])?;
        let cand = MatchedPair {
            estimate: 0,
            truth: j,
            signs,
            dists,
            column_errors,
            square_error,
            weight_error,
        };
        if best.as_ref().map_or(true, |b| cand.max_dist() < b.max_dist()) {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| Error::Degenerate("truth has no components".into()))
}

/// Truth columns reordered (and sign-flipped) to line up with the estimate
/// columns. Unmatched estimate columns keep a zero reference column with the
/// truth's mean weight, so every error against them stays large.
pub fn aligned_reference(m: &MatchResult, truth: &FactoredTensor, est_rank: usize) -> Result<FactoredTensor> {
    let mut factors: Vec<DMatrix<f64>> = truth.factors().iter().map(|f| DMatrix::zeros(f.nrows(), est_rank)).collect();
    let mut weights = DVector::from_element(est_rank, truth.weights().mean());
    for p in &m.pairs {
        for (r, f) in factors.iter_mut().enumerate() {
            f.set_column(p.estimate, &(truth.factor(r).column(p.truth) * p.signs[r]));
        }
        weights[p.estimate] = truth.weights()[p.truth];
    }
    FactoredTensor::new(factors, weights)
}

/// Matched pairs with square error at most `max_square_error`, over `k`.
pub fn recovery_rate(m: &MatchResult, k: usize, max_square_error: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    m.pairs.iter().filter(|p| p.square_error <= max_square_error).count() as f64 / k as f64
}
