//! Alternating rank-1 power updates, weight estimation and clustering of the
//! trial outputs into k centers.

use std::fmt;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::Decomposition;
use crate::error::{Error, Result};
use crate::init::{random_init, svd_init, InitMethod, InitVectors, DEFAULT_SVD_MAX_SWEEPS, DEFAULT_SVD_TOL};
use crate::linalg::normalized;
use crate::rng::{stream, Domain};
use crate::tensor::TensorView;

/// Iteration cap applied when only the movement threshold is configured.
pub const THRESHOLD_ONLY_CAP: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateVariant {
    /// Every mode is updated from the previous iterate.
    Jacobi,
    /// Each mode uses the freshest vectors of the modes updated before it.
    GaussSeidel,
}

impl fmt::Display for UpdateVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateVariant::Jacobi => "jacobi",
            UpdateVariant::GaussSeidel => "gauss-seidel",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Threshold,
    MaxIter,
    Degenerate,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Threshold => "threshold",
            StopReason::MaxIter => "max-iter",
            StopReason::Degenerate => "degenerate",
        })
    }
}

/// Fixed iteration count, movement threshold, or both (whichever fires first).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StoppingRule {
    FixedIters(usize),
    Threshold(f64),
    Both(usize, f64),
}

impl StoppingRule {
    pub fn max_iters(&self) -> usize {
        match *self {
            StoppingRule::FixedIters(n) | StoppingRule::Both(n, _) => n,
            StoppingRule::Threshold(_) => THRESHOLD_ONLY_CAP,
        }
    }

    pub fn t1(&self) -> Option<f64> {
        match *self {
            StoppingRule::Threshold(t) | StoppingRule::Both(_, t) => Some(t),
            StoppingRule::FixedIters(_) => None,
        }
    }

    /// `t_stop = t₁ (ln d)² √k / d`.
    pub fn t_stop(&self, k: usize, d: usize) -> Option<f64> {
        self.t1().map(|t1| stopping_threshold(t1, k, d))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.t1() {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Precondition(format!("t1 must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

pub fn stopping_threshold(t1: f64, k: usize, d: usize) -> f64 {
    let ln_d = (d as f64).ln();
    t1 * ln_d * ln_d * (k as f64).sqrt() / d as f64
}

/// Current iterate of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialState {
    pub vectors: Vec<DVector<f64>>,
    pub t: usize,
    /// Largest per-mode squared movement of the last step, sign-invariant.
    pub movement: f64,
    pub converged: bool,
}

impl TrialState {
    pub fn new(vectors: Vec<DVector<f64>>) -> Self {
        TrialState {
            vectors,
            t: 0,
            movement: f64::INFINITY,
            converged: false,
        }
    }
}

/// `min_z∈{±1} ‖z x − y‖²`.
pub fn sign_invariant_sq_movement(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let minus = (x - y).norm_squared();
    let plus = (x + y).norm_squared();
    minus.min(plus)
}

fn degenerate(mode: usize) -> Error {
    Error::Degenerate(format!("mode-{} update has zero norm", mode + 1))
}

/// One alternating update of every mode of a third-order tensor.
pub fn power_step(view: &TensorView, state: &TrialState, variant: UpdateVariant) -> Result<TrialState> {
    if view.order() != 3 {
        return Err(Error::UnsupportedOrder {
            expected: 3,
            actual: view.order(),
        });
    }
    step(view, state, variant)
}

/// Order-p update: every mode contracts all other modes' previous iterates.
pub fn power_step_general(view: &TensorView, state: &TrialState) -> Result<TrialState> {
    step(view, state, UpdateVariant::Jacobi)
}

fn step(view: &TensorView, state: &TrialState, variant: UpdateVariant) -> Result<TrialState> {
    let p = view.order();
    if state.vectors.len() != p {
        return Err(Error::shape(format!("state has {} vectors for order {p}", state.vectors.len())));
    }
    let next: Vec<DVector<f64>> = match variant {
        UpdateVariant::Jacobi => {
            let refs: Vec<&DVector<f64>> = state.vectors.iter().collect();
            view.leave_one_out(&refs)?
                .iter()
                .enumerate()
                .map(|(r, v)| normalized(v).map(|(u, _)| u).ok_or_else(|| degenerate(r)))
                .collect::<Result<_>>()?
        }
        UpdateVariant::GaussSeidel => {
            let mut cur = state.vectors.clone();
            for r in 0..p {
                let others: Vec<&DVector<f64>> = (0..p).filter(|&m| m != r).map(|m| &cur[m]).collect();
                let v = view.contract_to_vector(r, &others)?;
                cur[r] = normalized(&v).ok_or_else(|| degenerate(r))?.0;
            }
            cur
        }
    };
    let movement = next
        .iter()
        .zip(&state.vectors)
        .map(|(a, b)| sign_invariant_sq_movement(a, b))
        .fold(0.0, f64::max);
    Ok(TrialState {
        vectors: next,
        t: state.t + 1,
        movement,
        converged: false,
    })
}

/// `a ← T(a, a, I) / ‖T(a, a, I)‖` for a symmetric third-order tensor.
pub fn power_step_symmetric(view: &TensorView, a: &DVector<f64>) -> Result<DVector<f64>> {
    if view.order() != 3 {
        return Err(Error::UnsupportedOrder {
            expected: 3,
            actual: view.order(),
        });
    }
    let v = view.contract_to_vector(2, &[a, a])?;
    Ok(normalized(&v).ok_or_else(|| degenerate(2))?.0)
}

/// Output of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleEstimate {
    pub vectors: Vec<DVector<f64>>,
    pub weight: f64,
    pub trial_id: usize,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub init_method: InitMethod,
}

impl TripleEstimate {
    pub fn is_valid(&self) -> bool {
        self.stop_reason != StopReason::Degenerate
    }

    /// Largest per-mode `|⟨x, y⟩|` against another estimate.
    pub fn max_correlation(&self, other: &[DVector<f64>]) -> f64 {
        self.vectors
            .iter()
            .zip(other)
            .map(|(a, b)| a.dot(b).abs())
            .fold(0.0, f64::max)
    }
}

/// Trial options beyond the stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOptions {
    pub variant: UpdateVariant,
    /// Use the one-vector symmetric update.
    pub symmetric: bool,
    /// k in the stopping threshold; defaults to the factored rank of the view.
    pub rank: Option<usize>,
}

impl Default for TrialOptions {
    fn default() -> Self {
        TrialOptions {
            variant: UpdateVariant::Jacobi,
            symmetric: false,
            rank: None,
        }
    }
}

/// Iterates until the squared movement drops to `t_stop` or the iteration cap
/// is hit, then evaluates `ŵ = T(â, b̂, ĉ)` and makes it nonnegative by flipping
/// the last mode (every mode for symmetric runs).
pub fn run_trial(
    view: &TensorView,
    init: &InitVectors,
    stop: StoppingRule,
    opts: TrialOptions,
    trial_id: usize,
) -> Result<TripleEstimate> {
    stop.validate()?;
    let dims = view.dims();
    let k_hint = opts.rank.unwrap_or_else(|| view_rank_hint(view));
    let t_stop = stop.t_stop(k_hint, dims.max_dim());
    let max_iters = stop.max_iters();
    let mut state = TrialState::new(init.vectors.clone());
    if opts.symmetric {
        let a = state.vectors[0].clone();
        state.vectors = vec![a; view.order()];
    }
    let mut reason = StopReason::MaxIter;
    while state.t < max_iters {
        let next = if opts.symmetric {
            let a = power_step_symmetric(view, &state.vectors[0]);
            a.map(|a| {
                let movement = sign_invariant_sq_movement(&a, &state.vectors[0]);
                TrialState {
                    vectors: vec![a; 3],
                    t: state.t + 1,
                    movement,
                    converged: false,
                }
            })
        } else {
            step(view, &state, opts.variant)
        };
        match next {
            Ok(s) => state = s,
            Err(Error::Degenerate(_)) => {
                reason = StopReason::Degenerate;
                break;
            }
            Err(e) => return Err(e),
        }
        if t_stop.is_some_and(|ts| state.movement <= ts) {
            state.converged = true;
            reason = StopReason::Threshold;
            break;
        }
    }
    let refs: Vec<&DVector<f64>> = state.vectors.iter().collect();
    let mut weight = view.contract_to_scalar(&refs)?;
    if weight < 0.0 {
        weight = -weight;
        if opts.symmetric {
            state.vectors.iter_mut().for_each(|v| v.neg_mut());
        } else if let Some(last) = state.vectors.last_mut() {
            last.neg_mut();
        }
    }
    Ok(TripleEstimate {
        vectors: state.vectors,
        weight,
        trial_id,
        iterations: state.t,
        stop_reason: reason,
        init_method: init.method,
    })
}

/// The k entering the stopping threshold: the factored rank when known.
fn view_rank_hint(view: &TensorView) -> usize {
    match view {
        TensorView::Factored(f) => f.rank(),
        TensorView::Composite { base, .. } => base.rank(),
        TensorView::Dense(_) => 1,
    }
}

/// Clustering output.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub centers: Vec<TripleEstimate>,
    pub shortfall: usize,
}

/// Greedy extraction of up to `k` centers: take the remaining tuple with the
/// largest `|ŵ|`, polish it with `refine` more steps, then drop every tuple
/// whose per-mode correlation with the center exceeds `ν/2` somewhere.
pub fn cluster(
    view: &TensorView,
    tuples: &[TripleEstimate],
    k: usize,
    nu: f64,
    refine: StoppingRule,
    opts: TrialOptions,
) -> Result<ClusterResult> {
    if !(nu > 0.0 && nu < 1.0) {
        return Err(Error::Precondition(format!("ν must lie in (0,1), got {nu}")));
    }
    let mut remaining: Vec<&TripleEstimate> = tuples.iter().filter(|t| t.is_valid()).collect();
    let mut centers = Vec::with_capacity(k);
    while centers.len() < k && !remaining.is_empty() {
        let best = remaining
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                a.weight
                    .abs()
                    .total_cmp(&b.weight.abs())
                    .then(b.trial_id.cmp(&a.trial_id))
            })
            .map(|(i, _)| i)
            .expect("non-empty");
        let chosen = remaining.swap_remove(best);
        let init = InitVectors {
            vectors: chosen.vectors.clone(),
            method: chosen.init_method,
            theta: None,
        };
        let polished = if refine.max_iters() == 0 {
            chosen.clone()
        } else {
            let mut p = run_trial(view, &init, refine, opts, chosen.trial_id)?;
            if !p.is_valid() {
                p = chosen.clone();
            }
            p.iterations = chosen.iterations;
            p.stop_reason = chosen.stop_reason;
            p
        };
        remaining.retain(|t| t.max_correlation(&polished.vectors) <= nu / 2.0);
        centers.push(polished);
    }
    Ok(ClusterResult {
        shortfall: k - centers.len(),
        centers,
    })
}

/// Settings of the power phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerConfig {
    pub k: usize,
    pub trials: usize,
    pub init: InitMethod,
    pub stop: StoppingRule,
    pub nu: f64,
    /// Extra steps for each center; `None` reuses the trial stopping rule.
    pub refine: Option<StoppingRule>,
    pub opts: TrialOptions,
    pub svd_tol: f64,
    pub svd_max_sweeps: usize,
}

impl PowerConfig {
    pub fn new(k: usize, trials: usize, stop: StoppingRule, nu: f64) -> Self {
        PowerConfig {
            k,
            trials,
            init: InitMethod::Random,
            stop,
            nu,
            refine: None,
            opts: TrialOptions::default(),
            svd_tol: DEFAULT_SVD_TOL,
            svd_max_sweeps: DEFAULT_SVD_MAX_SWEEPS,
        }
    }
}

/// Power-phase output: the clustered decomposition and every trial result in
/// trial order.
#[derive(Debug, Clone)]
pub struct PowerPhase {
    pub decomposition: Decomposition,
    pub trials: Vec<TripleEstimate>,
}

/// Draws the start for trial `i` from its own stream.
pub fn trial_init(view: &TensorView, method: InitMethod, seed: u64, i: usize, svd_tol: f64, svd_max: usize) -> Result<InitVectors> {
    let mut rng = stream(seed, Domain::Trial, i as u64);
    match method {
        InitMethod::Random => Ok(random_init(view, &mut rng)),
        InitMethod::Svd => svd_init(view, &mut rng, svd_tol, svd_max),
    }
}

/// L independent trials (in parallel, merged by index) followed by clustering.
pub fn run_power_phase(view: &TensorView, cfg: &PowerConfig, seed: u64) -> Result<PowerPhase> {
    if cfg.trials < cfg.k || cfg.k == 0 {
        return Err(Error::Precondition(format!(
            "need 1 ≤ k ≤ L, got k={} L={}",
            cfg.k, cfg.trials
        )));
    }
    if cfg.opts.symmetric && view.order() != 3 {
        return Err(Error::UnsupportedOrder {
            expected: 3,
            actual: view.order(),
        });
    }
    let opts = TrialOptions {
        rank: Some(cfg.opts.rank.unwrap_or(cfg.k)),
        ..cfg.opts
    };
    let trials: Vec<TripleEstimate> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let init = match trial_init(view, cfg.init, seed, i, cfg.svd_tol, cfg.svd_max_sweeps) {
                Ok(init) => init,
                Err(Error::Degenerate(_)) => return Ok(degenerate_trial(view, cfg.init, i)),
                Err(e) => return Err(e),
            };
            run_trial(view, &init, cfg.stop, opts, i)
        })
        .collect::<Result<_>>()?;
    let refine = cfg.refine.unwrap_or(cfg.stop);
    let clustered = cluster(view, &trials, cfg.k, cfg.nu, refine, opts)?;
    if clustered.shortfall > 0 {
        log::warn!("clustering found {} of {} components", clustered.centers.len(), cfg.k);
    }
    let decomposition = Decomposition::from_estimates(
        view.dims().as_slice(),
        &clustered.centers,
        clustered.shortfall,
        cfg.opts.variant,
    );
    Ok(PowerPhase { decomposition, trials })
}

fn degenerate_trial(view: &TensorView, method: InitMethod, i: usize) -> TripleEstimate {
    TripleEstimate {
        vectors: view.dims().as_slice().iter().map(|&d| DVector::zeros(d)).collect(),
        weight: 0.0,
        trial_id: i,
        iterations: 0,
        stop_reason: StopReason::Degenerate,
        init_method: method,
    }
}
