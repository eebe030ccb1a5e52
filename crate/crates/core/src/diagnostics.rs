//! Checkable assumptions on a factored tensor and the theory-side constants
//! used for planning runs and comparing bounds with measurements.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::init::trial_gap;
use crate::linalg::{max_symmetric_eigenvalue, normalized, spectral_norm};
use crate::rng::{gaussian_vector, stream, Domain, Rng};
use crate::tensor::{FactoredTensor, TensorView};

/// Largest off-diagonal `|⟨x_i, x_j⟩|` over all modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Incoherence {
    pub rho: f64,
    pub mode: usize,
    pub pair: (usize, usize),
}

pub fn incoherence(t: &FactoredTensor) -> Incoherence {
    let mut best = Incoherence {
        rho: 0.0,
        mode: 0,
        pair: (0, 0),
    };
    for (r, f) in t.factors().iter().enumerate() {
        let g = f.tr_mul(f);
        for j in 0..g.ncols() {
            for i in 0..j {
                let v = g[(i, j)].abs();
                if v > best.rho {
                    best = Incoherence {
                        rho: v,
                        mode: r,
                        pair: (i, j),
                    };
                }
            }
        }
    }
    best
}

pub fn factor_spectral_norms(t: &FactoredTensor) -> Vec<f64> {
    t.factors().iter().map(spectral_norm).collect()
}

/// `‖X ⊙ Y‖` for the mode pairs (1,2), (2,3), (1,3), from the k×k Gram
/// `(XᵀX) ∘ (YᵀY)`.
pub fn khatri_rao_norms(t: &FactoredTensor) -> Result<Vec<((usize, usize), f64)>> {
    if t.order() != 3 {
        return Err(Error::UnsupportedOrder {
            expected: 3,
            actual: t.order(),
        });
    }
    let grams: Vec<DMatrix<f64>> = t.factors().iter().map(|f| f.tr_mul(f)).collect();
    Ok([(0, 1), (1, 2), (0, 2)]
        .into_iter()
        .map(|(a, b)| {
            let g = grams[a].component_mul(&grams[b]);
            ((a, b), max_symmetric_eigenvalue(&g).max(0.0).sqrt())
        })
        .collect())
}

/// `max_j ‖Σ_{i≠j} w_i ⟨a_i,a_j⟩⟨b_i,b_j⟩ c_i‖` and its argmax.
pub fn cross_term_bound(t: &FactoredTensor) -> Result<(f64, usize)> {
    if t.order() != 3 {
        return Err(Error::UnsupportedOrder {
            expected: 3,
            actual: t.order(),
        });
    }
    let mut h = t.gram(0).component_mul(&t.gram(1));
    h.fill_diagonal(0.0);
    for (i, mut row) in h.row_iter_mut().enumerate() {
        row *= t.weights()[i];
    }
    let v = t.factor(2) * h;
    Ok(v.column_iter()
        .map(|c| c.norm())
        .enumerate()
        .fold((0.0, 0), |acc, (j, n)| if n > acc.0 { (n, j) } else { acc }))
}

/// Lower-bound estimate of `‖Mᵀ‖_{2→p} = sup_{‖u‖=1} ‖Mᵀu‖_p` by the
/// fixed-point ascent `u ← M φ(Mᵀu) / ‖·‖` with `φ(y) = sign(y)|y|^{p−1}`,
/// best over `restarts` random starts.
pub fn two_to_p_norm_estimate(m: &DMatrix<f64>, p: f64, restarts: usize, iters: usize, rng: &mut Rng) -> f64 {
    assert!(p > 2.0, "two_to_p_norm_estimate needs p > 2");
    let lp = |y: &DVector<f64>| y.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p);
    let mut best = 0.0_f64;
    for _ in 0..restarts.max(1) {
        let Some((mut u, _)) = normalized(&gaussian_vector(m.nrows(), rng)) else {
            continue;
        };
        let mut val = lp(&m.tr_mul(&u));
        for _ in 0..iters {
            let y = m.tr_mul(&u);
            let g = m * y.map(|x| x.signum() * x.abs().powf(p - 1.0));
            let Some((next, _)) = normalized(&g) else { break };
            let nv = lp(&m.tr_mul(&next));
            u = next;
            let done = (nv - val).abs() <= 1e-15 * nv.max(1.0);
            val = val.max(nv);
            if done {
                break;
            }
        }
        best = best.max(val);
    }
    best
}

/// Polylog factor used in the `k` versus `d^{1.5}` condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polylog {
    Log2,
    Log2Squared,
}

impl Polylog {
    pub fn eval(self, d: f64) -> f64 {
        match self {
            Polylog::Log2 => d.log2(),
            Polylog::Log2Squared => d.log2().powi(2),
        }
    }
}

/// Explicit values for the constants hidden in the asymptotic statements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryConstants {
    /// Cross-term constant; `None` means `4 √(log₂ k)`.
    pub alpha: Option<f64>,
    /// Incoherence constant; `None` means the same default as `alpha`.
    pub alpha_incoherence: Option<f64>,
    pub alpha0: f64,
    /// Khatri-Rao constant; `None` means `log₂ d`.
    pub alpha0_kr: Option<f64>,
    pub beta_prime: f64,
    pub mu_tilde: f64,
    pub g_constant: f64,
    pub polylog: Polylog,
    pub p_norm: f64,
    pub p_norm_threshold: f64,
    pub spectral_restarts: usize,
    pub spectral_iters: usize,
    pub p_norm_restarts: usize,
    pub p_norm_iters: usize,
}

impl Default for TheoryConstants {
    fn default() -> Self {
        TheoryConstants {
            alpha: None,
            alpha_incoherence: None,
            alpha0: 2.0,
            alpha0_kr: None,
            beta_prime: 0.05,
            mu_tilde: 0.5,
            g_constant: 1.0,
            polylog: Polylog::Log2,
            p_norm: 2.9,
            p_norm_threshold: 1.25,
            spectral_restarts: 10,
            spectral_iters: 100,
            p_norm_restarts: 10,
            p_norm_iters: 200,
        }
    }
}

pub fn default_alpha(k: usize) -> f64 {
    4.0 * (k as f64).log2().max(0.0).sqrt()
}

impl TheoryConstants {
    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha.unwrap_or_else(|| default_alpha(k))
    }

    pub fn alpha_incoherence(&self, k: usize) -> f64 {
        self.alpha_incoherence.unwrap_or_else(|| self.alpha(k))
    }

    pub fn alpha0_kr(&self, d: usize) -> f64 {
        self.alpha0_kr.unwrap_or_else(|| (d as f64).log2())
    }
}

/// Constants of the local contraction argument.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionParams {
    pub k: usize,
    pub d: usize,
    pub alpha: f64,
    pub alpha0: f64,
    pub beta_prime: f64,
    pub gamma: f64,
    pub psi: f64,
    pub w_min: f64,
    pub q: f64,
    pub q_warning: bool,
    pub constant: f64,
    pub eps0_cap: f64,
    pub eps_r: f64,
    /// `ceil(log₂(1/(γ ε_R)))`, at least 1; `None` when `ε_R = 0`.
    pub n_iters: Option<u64>,
}

impl ContractionParams {
    /// `f(ε) = α√k/d + (2α/√d)(1+α₀√(k/d))² ε + α₀ ε²`.
    pub fn f(&self, eps: f64) -> f64 {
        let (k, d) = (self.k as f64, self.d as f64);
        self.alpha * k.sqrt() / d
            + 2.0 * self.alpha / d.sqrt() * (1.0 + self.alpha0 * (k / d).sqrt()).powi(2) * eps
            + self.alpha0 * eps * eps
    }
}

#[allow(clippy::too_many_arguments)]
pub fn contraction_params(k: usize, d: usize, alpha: f64, alpha0: f64, beta_prime: f64, w_max: f64, w_min: f64, psi: f64) -> Result<ContractionParams> {
    if k == 0 || d == 0 || !(alpha > 0.0 && alpha0 > 0.0 && beta_prime > 0.0 && w_min > 0.0) || w_max < w_min || psi < 0.0 {
        return Err(Error::Precondition("contraction parameters must be positive with w_max ≥ w_min".into()));
    }
    let (kf, df) = (k as f64, d as f64);
    let gamma = w_max / w_min;
    let spec = (1.0 + alpha0 * (kf / df).sqrt()).powi(2);
    let q = 2.0 * gamma * (2.0 * alpha / df.sqrt() * spec + beta_prime);
    let constant = 2.0 / w_min * (psi + w_max * alpha * kf.sqrt() / df);
    let eps0_cap = [
        beta_prime / alpha0,
        (w_min / (6.0 * w_max)).sqrt(),
        w_min * q / (4.0 * w_max),
        2.0 * w_max / (w_min * q) * (w_min / (6.0 * w_max) - alpha * kf.sqrt() / df),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    let eps_r = (psi / w_min).min(gamma * df.log2().powi(2) * kf.sqrt() / df);
    let n_iters = if eps_r > 0.0 {
        Some((1.0 / (gamma * eps_r)).log2().ceil().max(1.0) as u64)
    } else {
        None
    };
    Ok(ContractionParams {
        k,
        d,
        alpha,
        alpha0,
        beta_prime,
        gamma,
        psi,
        w_min,
        q,
        q_warning: q >= 0.5,
        constant,
        eps0_cap,
        eps_r,
        n_iters,
    })
}

/// Quantities of the slice-initialization analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitTheoryParams {
    pub mu_e: f64,
    pub mu_r: f64,
    pub mu_min: f64,
    pub mu_tilde: f64,
    pub mu: f64,
    /// `w_min / (w_max ρ) − 1`.
    pub mu_limit: f64,
    pub feasible: bool,
    pub k: usize,
    pub g_constant: f64,
}

impl InitTheoryParams {
    pub fn g(&self, l: f64) -> f64 {
        trial_gap(l, self.k, self.g_constant)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn init_theory_params(k: usize, d: usize, rho: f64, w_max: f64, w_min: f64, alpha: f64, alpha0: f64, mu_tilde: f64, g_constant: f64) -> Result<InitTheoryParams> {
    if !(mu_tilde > 0.0 && mu_tilde < 1.0) {
        return Err(Error::Precondition(format!("μ̃ must lie in (0,1), got {mu_tilde}")));
    }
    let r = (k as f64 / d as f64).sqrt();
    let mu_e = alpha * r * (2.0 + 2.0 * alpha0 * r + alpha / (d as f64).sqrt());
    let mu_r = (1.0 + alpha0 * r).powi(2);
    let mu = (2.0 * mu_r + mu_tilde - 1.0) / (1.0 - mu_tilde);
    let mu_limit = if rho > 0.0 { w_min / (w_max * rho) - 1.0 } else { f64::INFINITY };
    Ok(InitTheoryParams {
        mu_e,
        mu_r,
        mu_min: mu_e.min(mu_r),
        mu_tilde,
        mu,
        mu_limit,
        feasible: mu < mu_limit,
        k,
        g_constant,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Warn,
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub id: &'static str,
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub status: Status,
    pub note: String,
}

fn check(id: &'static str, name: &'static str, value: f64, threshold: f64, note: impl Into<String>) -> AssumptionCheck {
    AssumptionCheck {
        id,
        name,
        value,
        threshold,
        status: if value <= threshold { Status::Pass } else { Status::Fail },
        note: note.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub dims: Vec<usize>,
    pub k: usize,
    pub psi: f64,
    pub rho: Incoherence,
    pub factor_norms: Vec<f64>,
    pub khatri_rao_norms: Vec<((usize, usize), f64)>,
    pub tensor_spectral_estimate: f64,
    pub cross_term: f64,
    pub cross_term_argmax: usize,
    pub two_to_p_norms: Vec<f64>,
    pub gamma: f64,
    pub contraction: ContractionParams,
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    /// No check failed; warnings and info entries do not count.
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn get(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One `key=value` line per quantity.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "dims={}", dims.join("x"));
        let _ = writeln!(s, "k={}", self.k);
        let _ = writeln!(s, "psi={:e}", self.psi);
        let _ = writeln!(s, "rho={:.6e}", self.rho.rho);
        let _ = writeln!(s, "gamma={:.6e}", self.gamma);
        for (r, n) in self.factor_norms.iter().enumerate() {
            let _ = writeln!(s, "factor_norm.{}={n:.6e}", r + 1);
        }
        for ((a, b), n) in &self.khatri_rao_norms {
            let _ = writeln!(s, "khatri_rao_norm.{}{}={n:.6e}", a + 1, b + 1);
        }
        let _ = writeln!(s, "tensor_spectral_estimate={:.6e}", self.tensor_spectral_estimate);
        let _ = writeln!(s, "cross_term={:.6e}", self.cross_term);
        for (r, n) in self.two_to_p_norms.iter().enumerate() {
            let _ = writeln!(s, "two_to_p_norm.{}={n:.6e}", r + 1);
        }
        let _ = writeln!(s, "q={:.6e}", self.contraction.q);
        for c in &self.checks {
            let status = match c.status {
                Status::Pass => "pass",
                Status::Fail => "fail",
                Status::Warn => "warn",
                Status::Info => "info",
            };
            let _ = writeln!(s, "{}.{}={status} value={:.6e} threshold={:.6e}", c.id, c.name, c.value, c.threshold);
        }
        s
    }
}

/// Runs every check on `t` with noise level `psi`. Estimates use streams
/// derived from `seed`.
pub fn assumption_report(t: &FactoredTensor, psi: f64, consts: &TheoryConstants, seed: u64) -> Result<AssumptionReport> {
    if t.order() != 3 {
        return Err(Error::UnsupportedOrder {
            expected: 3,
            actual: t.order(),
        });
    }
    let k = t.rank();
    let d = t.dims().max_dim();
    let (kf, df) = (k as f64, d as f64);
    let alpha = consts.alpha(k);
    let alpha0 = consts.alpha0;
    let w_max = t.w_max();
    let w_min = t.w_min();
    let gamma = w_max / w_min;

    let rho = incoherence(t);
    let factor_norms = factor_spectral_norms(t);
    let kr = khatri_rao_norms(t)?;
    let (cross, cross_j) = cross_term_bound(t)?;
    let mut rng = stream(seed, Domain::Estimator, 10);
    let spec = TensorView::Factored(t.clone()).spectral_norm_estimate(consts.spectral_restarts, consts.spectral_iters, &mut rng)?;
    let mut rng = stream(seed, Domain::Estimator, 11);
    let two_p: Vec<f64> = t
        .factors()
        .iter()
        .map(|f| two_to_p_norm_estimate(f, consts.p_norm, consts.p_norm_restarts, consts.p_norm_iters, &mut rng))
        .collect();
    let contraction = contraction_params(k, d, alpha, alpha0, consts.beta_prime, w_max, w_min, psi)?;

    let col_dev = t
        .factors()
        .iter()
        .flat_map(|f| f.column_iter().map(|c| (c.norm() - 1.0).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    let mut checks = Vec::new();
    let mut a1 = check("A1", "unit_columns", col_dev, 1e-9, "max |‖column‖ − 1|");
    if t.weights().iter().any(|&w| w <= 0.0) {
        a1.status = Status::Fail;
        a1.note = "non-positive weight".into();
    }
    checks.push(a1);
    checks.push(check("A2", "incoherence", rho.rho, consts.alpha_incoherence(k) / df.sqrt(), "ρ ≤ α/√d"));
    let max_norm = factor_norms.iter().copied().fold(0.0, f64::max);
    checks.push(check("A3", "factor_spectral_norm", max_norm, 1.0 + alpha0 * (kf / df).sqrt(), "‖A‖ ≤ 1 + α₀√(k/d)"));
    checks.push(check(
        "A4",
        "tensor_spectral_norm",
        spec,
        w_max * alpha0,
        "lower-bound estimate; a pass is one-sided",
    ));
    checks.push(check("A4", "cross_term", cross, alpha * w_max * kf.sqrt() / df, "max_j ‖T_{∖j}(a_j,b_j,I)‖ ≤ α w_max √k/d"));
    checks.push(check("A5", "rank_vs_dimension", kf, df.powf(1.5) / consts.polylog.eval(df), "k ≤ d^{1.5}/polylog(d)"));
    let psi_cap = (1.0 / 6.0_f64).min(kf.log2().max(0.0).sqrt() / (alpha0 * df.sqrt())) * w_min;
    checks.push(check("A6", "noise_level", psi, psi_cap, "ψ ≤ min{1/6, √(log k)/(α₀√d)} w_min"));
    checks.push(check("A7", "weight_ratio", gamma, df.sqrt().min(df.powf(1.5) / kf), "γ ≤ min{√d, d^{1.5}/k}"));
    checks.push(AssumptionCheck {
        id: "A8",
        name: "contraction_factor",
        value: contraction.q,
        threshold: 0.5,
        status: if contraction.q < 0.5 { Status::Pass } else { Status::Warn },
        note: "q < 1/2".into(),
    });
    checks.push(AssumptionCheck {
        id: "A9",
        name: "initial_error_cap",
        value: contraction.eps0_cap,
        threshold: f64::NAN,
        status: Status::Info,
        note: "largest admissible initial error ε₀".into(),
    });
    let max_two_p = two_p.iter().copied().fold(0.0, f64::max);
    checks.push(check("A10", "two_to_p_norm", max_two_p, consts.p_norm_threshold, format!("‖Aᵀ‖_{{2→{}}} estimate", consts.p_norm)));
    let max_kr = kr.iter().map(|(_, n)| *n).fold(0.0, f64::max);
    checks.push(check("A11", "khatri_rao_norm", max_kr, 1.0 + consts.alpha0_kr(d) * kf.sqrt() / df, "‖A⊙B‖ ≤ 1 + α₀√k/d"));

    Ok(AssumptionReport {
        dims: t.dims().as_slice().to_vec(),
        k,
        psi,
        rho,
        factor_norms,
        khatri_rao_norms: kr,
        tensor_spectral_estimate: spec,
        cross_term: cross,
        cross_term_argmax: cross_j,
        two_to_p_norms: two_p,
        gamma,
        contraction,
        checks,
    })
}
