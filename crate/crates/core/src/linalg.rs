//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::rng::{gaussian_vector, Rng};

/// Norms at or below this are treated as exactly zero by normalizing updates.
pub const DEGENERATE_NORM: f64 = 1e-14;

/// Returns `v / ‖v‖` and `‖v‖`, or `None` when the norm is degenerate.
pub fn normalized(v: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let n = v.norm();
    if n <= DEGENERATE_NORM || !n.is_finite() {
        None
    } else {
        Some((v / n, n))
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Result of [`top_singular_pair`].
#[derive(Debug, Clone)]
pub struct SingularPair {
    pub left: DVector<f64>,
    pub right: DVector<f64>,
    pub value: f64,
    pub sweeps: usize,
    pub converged: bool,
}

/// Top singular triple of an implicit operator `M` (rows × cols) by alternating
/// power iteration `u ← Mv/‖Mv‖`, `v ← Mᵀu/‖Mᵀu‖`.
///
/// `apply` computes `M v`, `apply_t` computes `Mᵀ u`. Stops when the relative
/// change of the singular-value estimate drops below `tol` and the right
/// vector moves by less than `sqrt(tol)`. A stalled iterate (zero image)
/// triggers a restart from a fresh random vector; if every restart stalls the
/// operator is reported as zero.
pub fn top_singular_pair<F, G>(
    rows: usize,
    cols: usize,
    apply: F,
    apply_t: G,
    rng: &mut Rng,
    tol: f64,
    max_sweeps: usize,
) -> SingularPair
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    const RESTARTS: usize = 3;
    for _ in 0..RESTARTS {
        let mut v = match normalized(&gaussian_vector(cols, rng)) {
            Some((v, _)) => v,
            None => continue,
        };
        let mut sigma = 0.0;
        let mut stalled = false;
        let mut u = DVector::zeros(rows);
        for sweep in 1..=max_sweeps.max(1) {
            let Some((nu, _)) = normalized(&apply(&v)) else {
                stalled = true;
                break;
            };
            u = nu;
            let Some((nv, s)) = normalized(&apply_t(&u)) else {
                stalled = true;
                break;
            };
            let moved = (&nv - &v).norm();
            v = nv;
            let done = (s - sigma).abs() <= tol * s && moved <= tol.sqrt();
            sigma = s;
            if done {
                return SingularPair {
                    left: u,
                    right: v,
                    value: sigma,
                    sweeps: sweep,
                    converged: true,
                };
            }
        }
        if !stalled {
            return SingularPair {
                left: u,
                right: v,
                value: sigma,
                sweeps: max_sweeps,
                converged: false,
            };
        }
    }
    SingularPair {
        left: DVector::zeros(rows),
        right: DVector::zeros(cols),
        value: 0.0,
        sweeps: 0,
        converged: false,
    }
}
