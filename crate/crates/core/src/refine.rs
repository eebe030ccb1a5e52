//! Coordinate-descent removal of the residual bias left by the power phase.
//!
//! Each sweep updates every column of mode 3, projects the new factor back
//! into a spectral ball around the previous one, then does the same for
//! modes 1 and 2, and finally clips the weight change.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decomposition::Decomposition;
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, DEGENERATE_NORM};
use crate::tensor::{FactoredTensor, TensorView};

/// Mode order inside one asymmetric sweep.
pub const SWEEP_ORDER: [usize; 3] = [2, 0, 1];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NicenessParams {
    pub eta0: f64,
    pub eta1: f64,
}

impl Default for NicenessParams {
    fn default() -> Self {
        NicenessParams { eta0: 10.0, eta1: 2.5 }
    }
}

impl NicenessParams {
    pub fn new(eta0: f64, eta1: f64) -> Result<Self> {
        if !(eta0 > 0.0 && eta1 > 0.0) {
            return Err(Error::Precondition(format!("η₀, η₁ must be positive, got {eta0}, {eta1}")));
        }
        Ok(NicenessParams { eta0, eta1 })
    }

    /// `η₀ √k / d`.
    pub fn column_radius(&self, k: usize, d: usize) -> f64 {
        self.eta0 * (k as f64).sqrt() / d as f64
    }

    /// `η₁ · max(1, √(k/d))`.
    pub fn spectral_cap(&self, k: usize, d: usize) -> f64 {
        self.eta1 * (k as f64 / d as f64).sqrt().max(1.0)
    }
}

/// Clamps the singular values of `candidate` at `cap`, then pulls every
/// column back to within `radius` of the matching anchor column.
pub fn project(candidate: &DMatrix<f64>, anchor: &DMatrix<f64>, cap: f64, radius: f64) -> Result<DMatrix<f64>> {
    if candidate.shape() != anchor.shape() {
        return Err(Error::shape(format!(
            "candidate {:?} vs anchor {:?}",
            candidate.shape(),
            anchor.shape()
        )));
    }
    let svd = candidate.clone().svd(true, true);
    let mut q = if svd.singular_values.iter().all(|&s| s <= cap) {
        candidate.clone()
    } else {
        let u = svd.u.as_ref().expect("requested");
        let vt = svd.v_t.as_ref().expect("requested");
        let mut scaled = u.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= svd.singular_values[j].min(cap);
        }
        scaled * vt
    };
    for j in 0..q.ncols() {
        let delta = q.column(j) - anchor.column(j);
        let n = delta.norm();
        if n > radius {
            let clipped = anchor.column(j) + delta * (radius / n);
            q.set_column(j, &clipped);
        }
    }
    Ok(q)
}

/// Moves each weight toward its candidate by at most `radius`.
pub fn clip_weights(candidate: &DVector<f64>, previous: &DVector<f64>, radius: f64) -> DVector<f64> {
    candidate.zip_map(previous, |c, p| {
        let gap = c - p;
        if gap.abs() <= radius {
            c
        } else {
            p + radius * gap.signum()
        }
    })
}

/// One projection pass per mode with the input as its own anchor.
pub fn nice_init(dec: &Decomposition, params: &NicenessParams) -> Result<Decomposition> {
    let k = dec.rank();
    let mut out = dec.clone();
    for f in out.factors.iter_mut() {
        let d = f.nrows();
        *f = project(f, f, params.spectral_cap(k, d), params.column_radius(k, d))?;
    }
    out.niceness = Some(*params);
    Ok(out)
}

/// `V = T(X_s1, X_s2, I_target) − Z diag(ŵ) offdiag(G_s1 ∘ G_s2)`: column `i`
/// is the unnormalized coordinate-descent update of component `i` in mode
/// `target`.
pub fn cd_update_matrix(view: &TensorView, factors: &[DMatrix<f64>], weights: &DVector<f64>, target: usize) -> Result<DMatrix<f64>> {
    if view.order() != 3 || factors.len() != 3 {
        return Err(Error::UnsupportedOrder {
            expected: 3,
            actual: view.order(),
        });
    }
    let others: Vec<usize> = (0..3).filter(|&m| m != target).collect();
    let (x, y) = (&factors[others[0]], &factors[others[1]]);
    let mut v = view.contract_columns(target, &[x, y])?;
    let mut h = x.tr_mul(x).component_mul(&y.tr_mul(y));
    h.fill_diagonal(0.0);
    for (j, mut row) in h.row_iter_mut().enumerate() {
        row *= weights[j];
    }
    v -= &factors[target] * h;
    Ok(v)
}

/// Single-column form of [`cd_update_matrix`]: returns `(w̃_i, c̃_i)`.
pub fn cd_update_column(view: &TensorView, dec: &Decomposition, i: usize, target: usize) -> Result<(f64, DVector<f64>)> {
    let k = dec.rank();
    if i >= k || target >= 3 {
        return Err(Error::shape(format!("column {i} / mode {target} out of range")));
    }
    let others: Vec<usize> = (0..3).filter(|&m| m != target).collect();
    let xi = dec.factors[others[0]].column(i).into_owned();
    let yi = dec.factors[others[1]].column(i).into_owned();
    let mut v = view.contract_to_vector(target, &[&xi, &yi])?;
    for j in (0..k).filter(|&j| j != i) {
        let coef = dec.weights[j]
            * xi.dot(&dec.factors[others[0]].column(j))
            * yi.dot(&dec.factors[others[1]].column(j));
        v -= dec.factors[target].column(j) * coef;
    }
    let w = v.norm();
    if w <= DEGENERATE_NORM {
        return Err(Error::Degenerate(format!("column {} of mode {} vanished", i + 1, target + 1)));
    }
    Ok((w, v / w))
}

/// Symmetric update: `T(a_i, a_i, I) − S/d − Σ_{j≠i} ŵ_j(⟨a_i,a_j⟩² − 1/d) a_j`
/// with `S = Σ_l T(e_l, e_l, I)`. At the truth the result is
/// `w_i (1 − 1/d) a_i`, so weights are rescaled by `1/(1 − 1/d)`.
pub fn symmetric_update_matrix(view: &TensorView, a: &DMatrix<f64>, weights: &DVector<f64>, slice_sum: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = a.nrows() as f64;
    let mut v = view.contract_columns(2, &[a, a])?;
    for mut col in v.column_iter_mut() {
        col -= slice_sum / d;
    }
    let g = a.tr_mul(a);
    let mut h = g.map(|x| x * x - 1.0 / d);
    h.fill_diagonal(0.0);
    for (j, mut row) in h.row_iter_mut().enumerate() {
        row *= weights[j];
    }
    v -= a * h;
    Ok(v)
}

/// Per-sweep progress of [`run_refinement`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub sweep: usize,
    /// `‖Â_r − A_r‖_F` per mode (sign-aligned per column), when a reference is known.
    pub frobenius_error: Option<Vec<f64>>,
    /// `‖ŵ − w‖ / w_min`, when a reference is known.
    pub weight_error: Option<f64>,
    /// Largest sign-aligned column error over all modes, when a reference is known.
    pub max_col_error: Option<f64>,
    pub spectral_norms: Vec<f64>,
    pub frozen_columns: usize,
}

impl SweepRecord {
    /// `max{‖ΔA‖_F, ‖ΔB‖_F, ‖ΔC‖_F, ‖Δw‖/w_min}`.
    pub fn combined_error(&self) -> Option<f64> {
        let f = self.frobenius_error.as_ref()?;
        Some(f.iter().copied().fold(self.weight_error?, f64::max))
    }
}

/// Sign-aligned per-column error `min_z ‖z x − y‖`.
fn column_errors(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> Vec<f64> {
    est.column_iter()
        .zip(truth.column_iter())
        .map(|(x, y)| (x - y).norm().min((x + y).norm()))
        .collect()
}

fn record(sweep: usize, dec: &Decomposition, reference: Option<&FactoredTensor>, frozen: usize) -> SweepRecord {
    let spectral_norms = dec.factors.iter().map(spectral_norm).collect();
    let (fro, werr, maxcol) = match reference {
        Some(t) => {
            let per_mode: Vec<Vec<f64>> = dec
                .factors
                .iter()
                .zip(t.factors())
                .map(|(e, f)| column_errors(e, f))
                .collect();
            let fro = per_mode.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
            let maxcol = per_mode.iter().flatten().copied().fold(0.0, f64::max);
            let werr = (&dec.weights - t.weights()).norm() / t.w_min();
            (Some(fro), Some(werr), Some(maxcol))
        }
        None => (None, None, None),
    };
    SweepRecord {
        sweep,
        frobenius_error: fro,
        weight_error: werr,
        max_col_error: maxcol,
        spectral_norms,
        frozen_columns: frozen,
    }
}

/// Splits `V` into unit columns and their norms, keeping `fallback` columns
/// (and `fallback_w` weights) where a column vanished.
fn split_columns(v: &DMatrix<f64>, fallback: &DMatrix<f64>, fallback_w: &DVector<f64>, frozen: &mut [bool]) -> (DMatrix<f64>, DVector<f64>) {
    let mut cols = v.clone();
    let mut w = DVector::zeros(v.ncols());
    for j in 0..v.ncols() {
        let n = v.column(j).norm();
        if n <= DEGENERATE_NORM || !n.is_finite() {
            cols.set_column(j, &fallback.column(j));
            w[j] = fallback_w[j];
            frozen[j] = true;
        } else {
            cols.column_mut(j).unscale_mut(n);
            w[j] = n;
        }
    }
    (cols, w)
}

fn normalize_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let n = col.norm();
        if n > DEGENERATE_NORM {
            col /= n;
        }
    }
}

/// Refinement options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub sweeps: usize,
    pub params: NicenessParams,
    pub symmetric: bool,
    /// Stop early once the combined error against the reference reaches this.
    pub target_error: Option<f64>,
}

/// Runs `sweeps` coordinate-descent sweeps starting from `dec0`.
///
/// `reference` must have its columns aligned with those of `dec0`; it only
/// feeds the error trace.
pub fn run_refinement(view: &TensorView, dec0: &Decomposition, opts: &RefineOptions, reference: Option<&FactoredTensor>) -> Result<Decomposition> {
    if view.order() != 3 {
        return Err(Error::UnsupportedOrder {
            expected: 3,
            actual: view.order(),
        });
    }
    if let Some(r) = reference {
        if r.rank() != dec0.rank() {
            return Err(Error::shape(format!("reference rank {} vs {}", r.rank(), dec0.rank())));
        }
    }
    let k = dec0.rank();
    let mut dec = dec0.clone();
    dec.niceness = Some(opts.params);
    if k == 0 {
        return Ok(dec);
    }
    let report = nice_check(&dec, None, &opts.params);
    if !report.spectral_ok.iter().all(|&b| b) {
        log::warn!("refinement input exceeds the spectral cap: {:?}", report.spectral_norms);
    }
    let mut frozen = vec![false; k];
    dec.trace.push(record(0, &dec, reference, 0));
    let slice_sum = if opts.symmetric { Some(view.diagonal_slice_sum()?) } else { None };
    for sweep in 1..=opts.sweeps {
        let mut stage_frozen = vec![false; k];
        let w_tilde = if let Some(s) = &slice_sum {
            let a = &dec.factors[0];
            let d = a.nrows();
            let v = symmetric_update_matrix(view, a, &dec.weights, s)?;
            let (cols, w) = split_columns(&v, a, &dec.weights, &mut stage_frozen);
            let mut q = project(&cols, a, opts.params.spectral_cap(k, d), opts.params.column_radius(k, d))?;
            normalize_columns(&mut q);
            dec.factors = vec![q.clone(), q.clone(), q];
            w / (1.0 - 1.0 / d as f64)
        } else {
            let mut w_last = dec.weights.clone();
            for &mode in &SWEEP_ORDER {
                let d = dec.factors[mode].nrows();
                let v = cd_update_matrix(view, &dec.factors, &dec.weights, mode)?;
                let (cols, w) = split_columns(&v, &dec.factors[mode], &dec.weights, &mut stage_frozen);
                let mut q = project(&cols, &dec.factors[mode], opts.params.spectral_cap(k, d), opts.params.column_radius(k, d))?;
                normalize_columns(&mut q);
                dec.factors[mode] = q;
                w_last = w;
            }
            w_last
        };
        let d = dec.factors.iter().map(|f| f.nrows()).max().unwrap_or(1);
        dec.weights = clip_weights(&w_tilde, &dec.weights, opts.params.column_radius(k, d));
        let n_frozen = stage_frozen.iter().filter(|&&b| b).count();
        for (f, s) in frozen.iter_mut().zip(&stage_frozen) {
            *f |= *s;
        }
        let rec = record(sweep, &dec, reference, n_frozen);
        let done = opts
            .target_error
            .zip(rec.combined_error())
            .is_some_and(|(t, e)| e <= t);
        dec.trace.push(rec);
        if done {
            break;
        }
    }
    for (meta, f) in dec.components.iter_mut().zip(&frozen) {
        meta.frozen |= *f;
    }
    Ok(dec)
}

/// Which niceness clauses hold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NiceReport {
    pub spectral_norms: Vec<f64>,
    pub spectral_caps: Vec<f64>,
    pub spectral_ok: Vec<bool>,
    /// Largest sign-aligned column distance per mode, with a reference.
    pub max_column_dist: Option<Vec<f64>>,
    pub column_ok: Option<Vec<bool>>,
    pub max_weight_gap: Option<f64>,
    pub weight_ok: Option<bool>,
}

impl NiceReport {
    pub fn is_nice(&self) -> bool {
        self.spectral_ok.iter().all(|&b| b)
            && self.column_ok.as_ref().map_or(true, |c| c.iter().all(|&b| b))
            && self.weight_ok.unwrap_or(true)
    }
}

/// Checks the spectral cap and, given an aligned reference, the column and
/// weight radii (`η₀√k/d` and `η₀ w_max √k/d`).
pub fn nice_check(dec: &Decomposition, reference: Option<&FactoredTensor>, params: &NicenessParams) -> NiceReport {
    let k = dec.rank();
    let spectral_norms: Vec<f64> = dec.factors.iter().map(spectral_norm).collect();
    let spectral_caps: Vec<f64> = dec.factors.iter().map(|f| params.spectral_cap(k, f.nrows())).collect();
    let spectral_ok = spectral_norms.iter().zip(&spectral_caps).map(|(n, c)| n <= c).collect();
    let (max_column_dist, column_ok, max_weight_gap, weight_ok) = match reference {
        Some(t) => {
            let dists: Vec<f64> = dec
                .factors
                .iter()
                .zip(t.factors())
                .map(|(e, f)| column_errors(e, f).into_iter().fold(0.0, f64::max))
                .collect();
            let ok = dists
                .iter()
                .zip(&dec.factors)
                .map(|(x, f)| *x <= params.column_radius(k, f.nrows()))
                .collect();
            let d = dec.factors.iter().map(|f| f.nrows()).max().unwrap_or(1);
            let gap = (&dec.weights - t.weights()).amax();
            let wok = gap <= t.w_max() * params.column_radius(k, d);
            (Some(dists), Some(ok), Some(gap), Some(wok))
        }
        None => (None, None, None, None),
    };
    NiceReport {
        spectral_norms,
        spectral_caps,
        spectral_ok,
        max_column_dist,
        column_ok,
        max_weight_gap,
        weight_ok,
    }
}
