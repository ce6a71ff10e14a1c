//! Spectral analysis of the closed-neighborhood matrix.
//!
//! The matrix `A` analyzed here is **self-inclusive**: `A_ij = 1` iff
//! `j ∈ V_i`, so the diagonal is all ones. This convention is forced by the
//! identities the analysis rests on — `(A²)_ij = |V_i ∩ V_j|` and, for a
//! graph with `|V_i| = V` everywhere, a top eigenvalue of exactly `V` with
//! `(A − V·I)²` positive semidefinite with one-dimensional kernel. None of
//! these hold for the loop-free adjacency matrix.
//!
//! For a regular graph the spectrum `ν_1 ≤ … ≤ ν_K` of `A` determines both
//! stability thresholds of the workload dynamics:
//! - global: `e⁻¹/V` (drift threshold on the diagonal),
//! - local: `e⁻¹/V · (1 − γ²/V²)` with spectral gap `γ = ν_K − ν_{K−1}`,
//!   below which the diagonal is locally unstable.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::numerics::symmetric_eigenvalues_sorted;

/// e⁻¹, the peak of x·e^{−x}.
pub fn exp_neg_one() -> f64 {
    (-1.0f64).exp()
}

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("operation requires a regular graph (all |V_i| equal); degrees vary")]
    IrregularGraph,
}

/// Symmetric 0/1 closed-neighborhood matrix: `A_ij = 1 ⇔ j ∈ V_i`,
/// diagonal all ones, row sums `|V_i|`.
pub fn closed_neighborhood_matrix(g: &Graph) -> DMatrix<f64> {
    let k = g.node_count();
    DMatrix::from_fn(k, k, |i, j| if g.contains_closed(i, j) { 1.0 } else { 0.0 })
}

/// `(A − V·I)²` for a regular graph; positive semidefinite with kernel
/// spanned by the all-ones vector when the graph is connected.
pub fn neighborhood_laplacian_square(g: &Graph) -> Result<DMatrix<f64>, SpectralError> {
    let v = g.regular_degree().ok_or(SpectralError::IrregularGraph)? as f64;
    let k = g.node_count();
    let a = closed_neighborhood_matrix(g);
    let shifted = a - DMatrix::<f64>::identity(k, k) * v;
    Ok(&shifted * &shifted)
}

/// Jacobian of the closed-form drift map `x ↦ F(φ(x))` evaluated at the
/// all-ones state, for a regular graph. Entries:
///
/// - diagonal: `−e⁻¹ (V−1) / V²`,
/// - `+e⁻¹ |V_i ∪ V_j| / V³` for `j ∈ V_i \ {i}`,
/// - `−e⁻¹ |V_i ∩ V_j| / V³` for `j ∉ V_i`.
///
/// Annihilates the all-ones vector and equals `−e⁻¹/V³ · (A − V·I)²`.
pub fn diagonal_jacobian(g: &Graph) -> Result<DMatrix<f64>, SpectralError> {
    let v = g.regular_degree().ok_or(SpectralError::IrregularGraph)? as f64;
    let k = g.node_count();
    let e_inv = exp_neg_one();
    let v3 = v * v * v;
    Ok(DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            -e_inv * (v - 1.0) / (v * v)
        } else {
            let inter = g.neighborhood_intersection(i, j) as f64;
            if g.contains_closed(i, j) {
                // |V_i ∪ V_j| = 2V − |V_i ∩ V_j|
                e_inv * (2.0 * v - inter) / v3
            } else {
                -e_inv * inter / v3
            }
        }
    }))
}

/// Eigenvalues `η_i = −e⁻¹ (V − ν_{K−i})² / V³` of [`diagonal_jacobian`],
/// derived from the sorted spectrum of `A`. `η_0 = 0` and the list is
/// non-increasing.
pub fn eta_from_spectrum(nu_sorted: &[f64], v: f64) -> Vec<f64> {
    let k = nu_sorted.len();
    let e_inv = exp_neg_one();
    (0..k)
        .map(|i| {
            let nu = nu_sorted[k - 1 - i];
            let d = v - nu;
            -e_inv * d * d / (v * v * v)
        })
        .collect()
}

/// Thresholds and spectrum of the interaction graph.
///
/// For irregular graphs the eigenvalues and gap are still reported, but the
/// threshold block is absent and `threshold_note` points to the coarse
/// max-degree bound instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Arrival rate the report was requested for (echoed for display).
    pub lambda: f64,
    /// Eigenvalues of the closed-neighborhood matrix, ascending.
    pub eigenvalues: Vec<f64>,
    pub top_eigenvalue: f64,
    /// γ = ν_K − ν_{K−1} ≥ 0.
    pub spectral_gap: f64,
    pub is_regular: bool,
    /// |V_i| when regular.
    pub regular_degree: Option<usize>,
    /// Eigenvalues of the diagonal Jacobian, `η_0 = 0 ≥ η_1 ≥ …` (regular only).
    pub eta: Option<Vec<f64>>,
    /// e⁻¹/V (regular only).
    pub global_threshold: Option<f64>,
    /// e⁻¹/V · (1 − γ²/V²) (regular only).
    pub local_threshold: Option<f64>,
    pub threshold_note: Option<String>,
}

/// Spectral report for `g`: sorted eigenvalues, gap, and (for regular
/// graphs) the η list and both stability thresholds.
pub fn spectral_report(g: &Graph, lambda: f64) -> SpectralReport {
    let a = closed_neighborhood_matrix(g);
    let eigenvalues = symmetric_eigenvalues_sorted(&a);
    let k = eigenvalues.len();
    let top_eigenvalue = eigenvalues[k - 1];
    let spectral_gap = if k >= 2 {
        top_eigenvalue - eigenvalues[k - 2]
    } else {
        0.0
    };
    match g.regular_degree() {
        Some(v) => {
            let vf = v as f64;
            let e_inv = exp_neg_one();
            let global = e_inv / vf;
            let ratio = spectral_gap / vf;
            SpectralReport {
                lambda,
                eta: Some(eta_from_spectrum(&eigenvalues, vf)),
                eigenvalues,
                top_eigenvalue,
                spectral_gap,
                is_regular: true,
                regular_degree: Some(v),
                global_threshold: Some(global),
                local_threshold: Some(global * (1.0 - ratio * ratio)),
                threshold_note: None,
            }
        }
        None => SpectralReport {
            lambda,
            eigenvalues,
            top_eigenvalue,
            spectral_gap,
            is_regular: false,
            regular_degree: None,
            eta: None,
            global_threshold: None,
            local_threshold: None,
            threshold_note: Some(format!(
                "not applicable (irregular graph; use the max-degree bound e^-1/{} as a \
                 sufficient stability condition)",
                g.max_closed_degree()
            )),
        },
    }
}
