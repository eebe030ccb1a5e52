use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::{ExperimentConfig, NoiseMode};
use crate::decomposition::Decomposition;
use crate::error::{Error, Result};
use crate::init::InitMethod;
use crate::power::{run_power_phase, PowerConfig, StopReason, StoppingRule, TrialOptions, TripleEstimate};
use crate::refine::{run_refinement, RefineOptions, SweepRecord};
use crate::synth::{aligned_reference, factored_noise, gaussian_noise, match_components, random_ground_truth, random_symmetric_truth, score_pair, MatchResult};
use crate::tensor::io::read_factored;
use crate::tensor::{Dims, FactoredTensor, Perturbation, TensorView};

/// One line of `metrics.csv`. Errors and iterations are means over the
/// recovered power trials; the recovery rate counts clustered components.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub d: usize,
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub noise_psi: f64,
    pub recovery_rate: f64,
    pub avg_square_error: f64,
    pub avg_weight_error: f64,
    pub avg_iterations: f64,
}

/// Scores after the coordinate-descent phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinedMetrics {
    pub recovery_rate: f64,
    pub avg_square_error: f64,
    pub avg_weight_error: f64,
    /// Largest `‖Â_r − A_r‖_F` over modes against the aligned truth.
    pub factor_error: f64,
    /// `‖ŵ − w‖` against the aligned truth.
    pub weight_error_norm: f64,
    pub max_column_error: f64,
    pub sweeps: usize,
}

/// One power trial scored against its nearest truth component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub run_id: String,
    pub trial_id: usize,
    pub init_method: InitMethod,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub weight: f64,
    pub nearest_truth: Option<usize>,
    /// Per-mode dist to the nearest truth component.
    pub dists: Vec<f64>,
    pub max_dist: f64,
    pub square_error: f64,
    pub weight_error: f64,
    pub recovered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatDetail {
    pub run_id: String,
    pub seed: u64,
    pub noise_achieved: f64,
    pub shortfall: usize,
    pub trials: Vec<TrialRow>,
    pub trace: Vec<SweepRecord>,
    pub refined: Option<RefinedMetrics>,
    /// Fraction of truth components hit within the first ℓ trials, ℓ = 1..=L.
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub l_prefix: usize,
    pub recovery_rate: f64,
}

/// Means over the finite entries of each metrics column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregates {
    pub recovery_rate: f64,
    pub avg_square_error: f64,
    pub avg_weight_error: f64,
    pub avg_iterations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub rows: Vec<MetricsRow>,
    pub repeats: Vec<RepeatDetail>,
    pub aggregates: Aggregates,
    pub curve: Vec<CurvePoint>,
    pub wall_clock_secs: f64,
    pub version: String,
}

impl RunSummary {
    /// A summary with no repeats.
    pub fn empty(config: ExperimentConfig) -> Self {
        RunSummary {
            config,
            rows: Vec::new(),
            repeats: Vec::new(),
            aggregates: aggregate(&[]),
            curve: Vec::new(),
            wall_clock_secs: 0.0,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

fn finite_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values.filter(|v| v.is_finite()) {
        s += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn aggregate(rows: &[MetricsRow]) -> Aggregates {
    Aggregates {
        recovery_rate: finite_mean(rows.iter().map(|r| r.recovery_rate)),
        avg_square_error: finite_mean(rows.iter().map(|r| r.avg_square_error)),
        avg_weight_error: finite_mean(rows.iter().map(|r| r.avg_weight_error)),
        avg_iterations: finite_mean(rows.iter().map(|r| r.avg_iterations)),
    }
}

fn load_truth(cfg: &ExperimentConfig, seed: u64) -> Result<FactoredTensor> {
    if let Some(path) = &cfg.truth {
        let t = read_factored(path)?;
        if t.rank() != cfg.rank || t.dims().as_slice() != cfg.mode_dims().as_slice() {
            return Err(Error::InvalidValue {
                key: "truth".into(),
                message: format!("file has dims {:?} and rank {}, config asks for {:?} and {}", t.dims().as_slice(), t.rank(), cfg.mode_dims(), cfg.rank),
            });
        }
        return Ok(t);
    }
    let g = if cfg.symmetric {
        random_symmetric_truth(cfg.dims[0], cfg.rank, cfg.order, seed)?
    } else {
        random_ground_truth(&cfg.mode_dims(), cfg.rank, seed)?
    };
    Ok(g.tensor)
}

fn build_view(cfg: &ExperimentConfig, truth: &FactoredTensor, seed: u64) -> Result<(TensorView, f64)> {
    if cfg.noise == 0.0 {
        return Ok((TensorView::Factored(truth.clone()), 0.0));
    }
    let dims = Dims::new(cfg.mode_dims())?;
    let (p, spec) = match cfg.noise_kind {
        NoiseMode::Dense => {
            let (t, s) = gaussian_noise(&dims, cfg.noise, seed, cfg.dense_budget)?;
            (Perturbation::Dense(t), s)
        }
        NoiseMode::Factored => {
            let (t, s) = factored_noise(&dims, cfg.noise_rank, cfg.noise, seed)?;
            (Perturbation::Factored(t), s)
        }
    };
    Ok((TensorView::composite(truth.clone(), p)?, spec.achieved))
}

/// Nearest truth component of a trial: the largest worst-mode |correlation|,
/// first index on ties.
fn score_trial(t: &TripleEstimate, truth: &FactoredTensor, recovery_dist: f64, run_id: &str) -> Result<TrialRow> {
    let mut row = TrialRow {
        run_id: run_id.to_string(),
        trial_id: t.trial_id,
        init_method: t.init_method,
        iterations: t.iterations,
        stop_reason: t.stop_reason,
        weight: t.weight,
        nearest_truth: None,
        dists: Vec::new(),
        max_dist: 1.0,
        square_error: f64::NAN,
        weight_error: f64::NAN,
        recovered: false,
    };
    if !t.is_valid() {
        return Ok(row);
    }
    let corr: Vec<DVector<f64>> = truth.factors().iter().zip(&t.vectors).map(|(f, v)| f.tr_mul(v).abs()).collect();
    let mut best = (f64::NEG_INFINITY, 0);
    for j in 0..truth.rank() {
        let worst = corr.iter().map(|c| c[j]).fold(f64::INFINITY, f64::min);
        if worst > best.0 {
            best = (worst, j);
        }
    }
    let j = best.1;
    let tv: Vec<DVector<f64>> = truth.factors().iter().map(|f| f.column(j).into_owned()).collect();
    let (_, dists, _, sq, we) = score_pair(&t.vectors, t.weight, &tv, truth.weights()[j])?;
    row.nearest_truth = Some(j);
    row.max_dist = dists.iter().copied().fold(0.0, f64::max);
    row.dists = dists;
    row.square_error = sq;
    row.weight_error = we;
    row.recovered = row.max_dist <= recovery_dist;
    Ok(row)
}

/// `curve[ℓ−1]` = share of truth components hit by trials `0..ℓ`.
fn prefix_curve(rows: &[TrialRow], k: usize) -> Vec<f64> {
    let mut hit = vec![false; k];
    let mut count = 0usize;
    rows.iter()
        .map(|r| {
            if let (true, Some(j)) = (r.recovered, r.nearest_truth) {
                if !hit[j] {
                    hit[j] = true;
                    count += 1;
                }
            }
            count as f64 / k as f64
        })
        .collect()
}

fn recovered_means(m: &MatchResult, recovery_dist: f64) -> (usize, f64, f64) {
    let ok: Vec<_> = m.pairs.iter().filter(|p| p.max_dist() <= recovery_dist).collect();
    (
        ok.len(),
        finite_mean(ok.iter().map(|p| p.square_error)),
        finite_mean(ok.iter().map(|p| p.weight_error)),
    )
}

fn refined_metrics(dec: &Decomposition, truth: &FactoredTensor, cfg: &ExperimentConfig) -> Result<RefinedMetrics> {
    let m = match_components(&dec.factors, &dec.weights, truth, cfg.accept_dist, cfg.match_strategy)?;
    let (n, sq, we) = recovered_means(&m, cfg.recovery_dist);
    let reference = aligned_reference(&m, truth, dec.rank())?;
    let factor_error = dec
        .factors
        .iter()
        .zip(reference.factors())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    let max_column_error = dec
        .factors
        .iter()
        .zip(reference.factors())
        .flat_map(|(a, b)| (a - b).column_iter().map(|c| c.norm()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    Ok(RefinedMetrics {
        recovery_rate: n as f64 / truth.rank() as f64,
        avg_square_error: sq,
        avg_weight_error: we,
        factor_error,
        weight_error_norm: (&dec.weights - reference.weights()).norm(),
        max_column_error,
        sweeps: dec.trace.len().saturating_sub(1),
    })
}

fn run_repeat(cfg: &ExperimentConfig, r: usize) -> Result<(MetricsRow, RepeatDetail)> {
    let seed = cfg.seed.wrapping_add(r as u64);
    let d = cfg.max_dim();
    let run_id = format!("d{d}_k{}_L{}_s{}_r{r}", cfg.rank, cfg.trials, cfg.seed);
    let truth = load_truth(cfg, seed)?;
    let (view, achieved) = build_view(cfg, &truth, seed)?;

    let mut pc = PowerConfig::new(cfg.rank, cfg.trials, cfg.stopping_rule(), cfg.nu);
    pc.init = cfg.init;
    pc.refine = cfg.center_iters.map(StoppingRule::FixedIters);
    pc.opts = TrialOptions {
        variant: cfg.variant,
        symmetric: cfg.symmetric,
        rank: None,
    };
    let phase = run_power_phase(&view, &pc, seed)?;

    let trials: Vec<TrialRow> = phase
        .trials
        .par_iter()
        .map(|t| score_trial(t, &truth, cfg.recovery_dist, &run_id))
        .collect::<Result<_>>()?;
    let curve = prefix_curve(&trials, truth.rank());

    let dec0 = &phase.decomposition;
    let m = match_components(&dec0.factors, &dec0.weights, &truth, cfg.accept_dist, cfg.match_strategy)?;
    let (n, _, _) = recovered_means(&m, cfg.recovery_dist);
    let recovered: Vec<&TrialRow> = trials.iter().filter(|t| t.recovered).collect();
    let row = MetricsRow {
        run_id: run_id.clone(),
        d,
        k: cfg.rank,
        l: cfg.trials,
        noise_psi: cfg.noise,
        recovery_rate: n as f64 / truth.rank() as f64,
        avg_square_error: finite_mean(recovered.iter().map(|t| t.square_error)),
        avg_weight_error: finite_mean(recovered.iter().map(|t| t.weight_error)),
        avg_iterations: finite_mean(recovered.iter().map(|t| t.iterations as f64)),
    };

    let (trace, refined) = if cfg.order == 3 && cfg.refine_sweeps > 0 && dec0.rank() > 0 {
        let reference = aligned_reference(&m, &truth, dec0.rank())?;
        let opts = RefineOptions {
            sweeps: cfg.refine_sweeps,
            params: cfg.niceness(),
            symmetric: cfg.symmetric,
            target_error: None,
        };
        let dec = run_refinement(&view, dec0, &opts, Some(&reference))?;
        let metrics = refined_metrics(&dec, &truth, cfg)?;
        (dec.trace, Some(metrics))
    } else {
        (Vec::new(), None)
    };

    Ok((
        row,
        RepeatDetail {
            run_id,
            seed,
            noise_achieved: achieved,
            shortfall: dec0.shortfall,
            trials,
            trace,
            refined,
            curve,
        },
    ))
}

/// Runs every repeat (in parallel, merged in repeat order).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let results: Vec<(MetricsRow, RepeatDetail)> = (0..cfg.repeats).into_par_iter().map(|r| run_repeat(cfg, r)).collect::<Result<_>>()?;
    let (rows, repeats): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let curve = (0..cfg.trials)
        .map(|i| CurvePoint {
            l_prefix: i + 1,
            recovery_rate: repeats.iter().map(|r| r.curve[i]).sum::<f64>() / repeats.len() as f64,
        })
        .collect();
    Ok(RunSummary {
        config: cfg.clone(),
        aggregates: aggregate(&rows),
        rows,
        repeats,
        curve,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

/// One run per (rank, noise) pair on top of `base`.
pub fn sweep(base: &ExperimentConfig, ranks: &[usize], noises: &[f64]) -> Result<Vec<RunSummary>> {
    let ranks = if ranks.is_empty() { vec![base.rank] } else { ranks.to_vec() };
    let noises = if noises.is_empty() { vec![base.noise] } else { noises.to_vec() };
    let mut out = Vec::new();
    for &k in &ranks {
        for &psi in &noises {
            let mut cfg = base.clone();
            cfg.rank = k;
            cfg.noise = psi;
            out.push(run_experiment(&cfg)?);
        }
    }
    Ok(out)
}

/// Size of the Table 1 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Ci,
    Desk,
    Full,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ci" => Ok(Scale::Ci),
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(Error::InvalidValue {
                key: "scale".into(),
                message: format!("`{s}`: expected ci, desk or full"),
            }),
        }
    }
}

impl Scale {
    /// `(d, ranks, L, repeats)`.
    pub fn grid(self) -> (usize, Vec<usize>, usize, usize) {
        match self {
            Scale::Ci => (200, vec![10, 50, 100], 100, 3),
            Scale::Desk => (1000, vec![10, 50, 100, 200], 200, 3),
            Scale::Full => (1000, vec![10, 50, 100, 200, 500, 1000, 2000], 2000, 10),
        }
    }
}

/// Runs the noiseless factored grid for `scale`, keeping the remaining
/// settings of `base`.
pub fn table1_suite(scale: Scale, base: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    let (d, ranks, l, repeats) = scale.grid();
    let mut cfg = base.clone();
    cfg.dims = vec![d];
    cfg.order = 3;
    cfg.symmetric = false;
    cfg.trials = l;
    cfg.repeats = repeats;
    cfg.noise = 0.0;
    cfg.truth = None;
    sweep(&cfg, &ranks, &[])
}
