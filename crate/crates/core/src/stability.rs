//! Stability classification and the projected dynamics on the simplex.
//!
//! For a regular graph with symmetric rate λ two thresholds matter:
//!
//! - `e⁻¹/V`: below it the fluid model drains and the workload chain is
//!   positive recurrent; above it growth is conjectured (and reported
//!   empirically, never asserted).
//! - `e⁻¹/V·(1 − γ²/V²)`: *above* it the balanced (diagonal) profile is a
//!   local attractor of the normalized dynamics; below it the diagonal is
//!   locally unstable and the mass settles into unbalanced stable profiles.
//!
//! The normalized dynamics live on the probability simplex: writing
//! `F_i(x) = λ − x_i·exp(−Σ_{j∈V_i} x_j)`, the profile `y = z/|z|` obeys
//! `y' = α(y) = F(φ(y)) − y·Σ_k F_k(φ(y))`, which is tangent to the simplex.
//! Off the simplex this module extends α by normalizing first (the extension
//! is homogeneous of order −1), which is what makes the analytic Jacobian at
//! the uniform point match centered finite differences in ambient
//! coordinates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fluid::fluid_rhs;
use crate::graph::Graph;
use crate::numerics::{
    ones_orthogonal_basis, project_to_simplex, tangent_eigenvalues, NumericsError,
};
pub use crate::numerics::numeric_jacobian;
use crate::spectral::{exp_neg_one, spectral_report, SpectralError};

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("point must lie on the probability simplex: {0}")]
    NotOnSimplex(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalStability {
    Stable,
    Unstable,
    /// Rate sits on the threshold to within 1e-12.
    Critical,
    /// Irregular graph or asymmetric rates: the diagonal theory does not apply.
    NotApplicable,
}

/// Threshold verdict for a (graph, rate-vector) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub lambda: Vec<f64>,
    pub symmetric_rates: bool,
    pub regular: bool,
    /// V for regular graphs, otherwise `max |V_i|` (coarse bound).
    pub degree_used: usize,
    /// `e⁻¹ / degree_used`.
    pub global_threshold: f64,
    /// `max λ_i < global_threshold`. For the irregular/asymmetric case this
    /// is the sufficient condition with the max-degree bound.
    pub fluid_stable: bool,
    /// `e⁻¹/V (1 − γ²/V²)`; present only for regular graphs.
    pub local_threshold: Option<f64>,
    pub diagonal_locally_stable: DiagonalStability,
    pub notes: Vec<String>,
}

const CRITICAL_BAND: f64 = 1e-12;

/// Classifies stability from the spectral thresholds. Regular graphs with a
/// symmetric rate get the full verdict; anything else falls back to the
/// sufficient max-degree bound with the local verdict marked not applicable.
pub fn classify(g: &Graph, lambda: &[f64]) -> StabilityVerdict {
    let symmetric = lambda.windows(2).all(|w| w[0] == w[1]);
    let lambda_max = lambda.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut notes = Vec::new();
    match (g.regular_degree(), symmetric) {
        (Some(v), true) => {
            let report = spectral_report(g, lambda_max);
            let global = report.global_threshold.expect("regular graph");
            let local = report.local_threshold.expect("regular graph");
            let rate = lambda[0];
            // K = 1 has no tangent directions: the balanced profile is the
            // whole simplex and trivially stable.
            let diagonal = if g.node_count() == 1 {
                DiagonalStability::Stable
            } else if (rate - local).abs() <= CRITICAL_BAND {
                DiagonalStability::Critical
            } else if rate > local {
                DiagonalStability::Stable
            } else {
                notes.push(
                    "diagonal locally unstable: balanced workload profiles repel; \
                     stable unbalanced profiles exist"
                        .to_string(),
                );
                DiagonalStability::Unstable
            };
            if (rate - global).abs() <= CRITICAL_BAND {
                notes.push("critical — inconclusive (rate equals e^-1/V)".to_string());
            } else if rate > global {
                notes.push(
                    "rate above e^-1/V: transience is conjectured, growth is reported \
                     empirically and never asserted"
                        .to_string(),
                );
            }
            StabilityVerdict {
                lambda: lambda.to_vec(),
                symmetric_rates: true,
                regular: true,
                degree_used: v,
                global_threshold: global,
                fluid_stable: rate < global,
                local_threshold: Some(local),
                diagonal_locally_stable: diagonal,
                notes,
            }
        }
        _ => {
            let v = g.max_closed_degree();
            let global = exp_neg_one() / v as f64;
            notes.push(format!(
                "irregular graph or asymmetric rates: using the sufficient bound \
                 max lambda < e^-1/{v}; the diagonal threshold theory does not apply"
            ));
            StabilityVerdict {
                lambda: lambda.to_vec(),
                symmetric_rates: symmetric,
                regular: g.regular_degree().is_some(),
                degree_used: v,
                global_threshold: global,
                fluid_stable: lambda_max < global,
                local_threshold: None,
                diagonal_locally_stable: DiagonalStability::NotApplicable,
                notes,
            }
        }
    }
}

/// Simplex-projected drift `α(y)`: on the simplex
/// `α_i = F_i(φ(y)) − y_i Σ_k F_k(φ(y))`, so `Σ_i α_i = 0`. Off the simplex
/// the point is normalized first, giving a (−1)-homogeneous extension.
pub fn projected_rhs(y: &[f64], g: &Graph, lambda: f64) -> Vec<f64> {
    let k = y.len();
    let s: f64 = y.iter().sum();
    // F(φ(y)) equals the fluid derivative at y, and φ is scale-free.
    let f = fluid_rhs(y, g, &vec![lambda; k]);
    let total: f64 = f.iter().sum();
    (0..k).map(|i| f[i] / s - y[i] * total / (s * s)).collect()
}

/// Analytic eigenvalue list of the diagonal linearization, in the
/// normalization of the closed-form spectral lemma:
///
/// - `μ_0 = λ − e⁻¹/V`, the drift mode along the all-ones direction,
/// - `μ_i = −e⁻¹(V − ν_{K−i})²/V³ − λ + e⁻¹/V` for `i ≥ 1`, the tangent
///   modes (`ν` ascending eigenvalues of the closed-neighborhood matrix).
///
/// The diagonal is locally stable iff `max_{i≥1} μ_i < 0`, equivalently
/// `λ > e⁻¹/V·(1 − γ²/V²)`. The tangent-space Jacobian
/// [`diagonal_jacobian_at_uniform`] carries eigenvalues `K·μ_i` (same signs).
pub fn diagonal_spectrum(g: &Graph, lambda: f64) -> Result<Vec<f64>, StabilityError> {
    let v = g
        .regular_degree()
        .ok_or(SpectralError::IrregularGraph)? as f64;
    let report = spectral_report(g, lambda);
    let nu = &report.eigenvalues;
    let k = nu.len();
    let e_inv = exp_neg_one();
    let drift = lambda - e_inv / v;
    let mut mu = Vec::with_capacity(k);
    mu.push(drift);
    for i in 1..k {
        let d = v - nu[k - 1 - i];
        mu.push(-e_inv * d * d / (v * v * v) - drift);
    }
    Ok(mu)
}

/// Stability of the diagonal from the analytic spectrum.
pub fn diagonal_verdict(g: &Graph, lambda: f64) -> Result<DiagonalStability, StabilityError> {
    let mu = diagonal_spectrum(g, lambda)?;
    if mu.len() == 1 {
        return Ok(DiagonalStability::Stable);
    }
    let max_tangent = mu[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(if max_tangent.abs() <= CRITICAL_BAND {
        DiagonalStability::Critical
    } else if max_tangent < 0.0 {
        DiagonalStability::Stable
    } else {
        DiagonalStability::Unstable
    })
}

/// Ambient Jacobian of [`projected_rhs`] at the uniform point `y₀ = 1/K`,
/// assembled analytically:
///
/// ```text
/// Dα(y₀) = (I − J/K)·(D(F∘φ)(y₀) − Σ_k F_k(φ(y₀))·I)
///        = K·(I − J/K)·(D(F∘φ)(1) − (λ − e⁻¹/V)·I),
/// ```
///
/// using `D(F∘φ)(y₀) = K·D(F∘φ)(1)` (zero-homogeneity of `F∘φ`) and the
/// uniform drift `F(φ(y₀)) = (λ − e⁻¹/V)·1`. Annihilates the all-ones
/// vector; its tangent eigenvalues are `K·μ_i` for the `μ_i` of
/// [`diagonal_spectrum`]. Matches centered finite differences of
/// [`projected_rhs`] entry-wise.
pub fn diagonal_jacobian_at_uniform(
    g: &Graph,
    lambda: f64,
) -> Result<DMatrix<f64>, StabilityError> {
    let v = g
        .regular_degree()
        .ok_or(SpectralError::IrregularGraph)? as f64;
    let k = g.node_count();
    let kf = k as f64;
    let jac_ones = crate::spectral::diagonal_jacobian(g)?;
    let drift = lambda - exp_neg_one() / v;
    let eye = DMatrix::<f64>::identity(k, k);
    let proj = &eye - DMatrix::from_element(k, k, 1.0 / kf);
    Ok(proj * (jac_ones - &eye * drift) * kf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenvaluePair {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointClass {
    Attracting,
    Repelling,
    Saddle,
    Marginal,
}

impl PointClass {
    pub fn is_attracting(self) -> bool {
        self == PointClass::Attracting
    }
}

/// A fixed point of the projected dynamics with its local classification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StablePoint {
    pub y: Vec<f64>,
    /// `‖α(y)‖₂`, re-evaluated fresh on the returned point.
    pub residual: f64,
    /// Eigenvalues of the numeric Jacobian restricted to the simplex tangent
    /// space (the all-ones direction projected out), descending real part.
    pub tangent_eigenvalues: Vec<EigenvaluePair>,
    pub classification: PointClass,
}

/// Marginality band on tangent real parts for classification.
const CLASS_BAND: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Random simplex starts for the damped Newton iteration.
    pub multistart: usize,
    pub seed: u64,
    /// Residual tolerance `‖α(y)‖₂ ≤ tol`.
    pub tol: f64,
    /// On 4-node cycles, also solve the one-dimensional symmetric reduction
    /// (equal mass on one adjacent pair, equal mass on the opposite pair)
    /// by bisection — the reduction that exhibits the off-diagonal points.
    pub symmetric_ansatz: bool,
    pub max_iter: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            multistart: 64,
            seed: 0,
            tol: 1e-10,
            symmetric_ansatz: true,
            max_iter: 100,
        }
    }
}

impl SearchConfig {
    /// Diagonal seed plus the symmetric reduction only — reproduces the
    /// classical three-point picture on the 4-cycle without surfacing
    /// rotated copies of the unbalanced points.
    pub fn ansatz_only(seed: u64) -> Self {
        SearchConfig { multistart: 0, seed, ..SearchConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StablePointSearch {
    pub points: Vec<StablePoint>,
    /// Newton starts that failed to converge (dropped).
    pub dropped_starts: usize,
}

fn residual_norm(alpha: &[f64]) -> f64 {
    alpha.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Damped Newton on the simplex: solve in tangent coordinates, re-project,
/// backtrack until the residual shrinks.
fn damped_newton<F>(
    y0: &[f64],
    f: &F,
    tol: f64,
    max_iter: usize,
) -> Option<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let k = y0.len();
    let q = ones_orthogonal_basis(k);
    let mut y = project_to_simplex(y0);
    let mut res = residual_norm(&f(&y));
    for _ in 0..max_iter {
        if res <= tol {
            return Some((y, res));
        }
        let jac = numeric_jacobian(f, &y, 1e-6).ok()?;
        let reduced = q.transpose() * &jac * &q;
        let alpha = f(&y);
        let rhs = q.transpose() * nalgebra::DVector::from_column_slice(&alpha);
        let delta_red = reduced.lu().solve(&(-rhs))?;
        let delta = &q * delta_red;
        let mut accepted = false;
        let mut theta = 1.0;
        for _ in 0..40 {
            let candidate: Vec<f64> =
                (0..k).map(|i| y[i] + theta * delta[i]).collect();
            let candidate = project_to_simplex(&candidate);
            let cand_res = residual_norm(&f(&candidate));
            if cand_res < res {
                y = candidate;
                res = cand_res;
                accepted = true;
                break;
            }
            theta *= 0.5;
        }
        if !accepted {
            return if res <= tol { Some((y, res)) } else { None };
        }
    }
    if res <= tol {
        Some((y, res))
    } else {
        None
    }
}

/// Roots of the symmetric 4-cycle reduction: mass `a` on one adjacent pair
/// and `(1−2a)/2` on the other, scanned and bisected over `a ∈ (0, 1/2)`.
fn ansatz_candidates(g: &Graph, lambda: f64) -> Vec<Vec<f64>> {
    if g.node_count() != 4 {
        return Vec::new();
    }
    let order = match g.hamiltonian_cycle_order() {
        Some(o) => o,
        None => return Vec::new(),
    };
    let build = |a: f64| {
        let b = 0.5 - a;
        let mut y = vec![0.0; 4];
        y[order[0]] = a;
        y[order[1]] = a;
        y[order[2]] = b;
        y[order[3]] = b;
        y
    };
    let residual = |a: f64| projected_rhs(&build(a), g, lambda)[order[0]];
    const GRID: usize = 4000;
    let lo = 1e-4;
    let hi = 0.5 - 1e-4;
    let at = |i: usize| lo + (hi - lo) * i as f64 / GRID as f64;
    let mut roots = Vec::new();
    let mut prev = residual(at(0));
    for i in 1..=GRID {
        let a = at(i);
        let cur = residual(a);
        if prev == 0.0 {
            roots.push(at(i - 1));
        } else if prev.signum() != cur.signum() && cur != 0.0 {
            let (mut lo_a, mut hi_a) = (at(i - 1), a);
            let (mut lo_r, _) = (prev, cur);
            for _ in 0..200 {
                let mid = 0.5 * (lo_a + hi_a);
                let mid_r = residual(mid);
                if mid_r == 0.0 {
                    lo_a = mid;
                    hi_a = mid;
                    break;
                }
                if mid_r.signum() == lo_r.signum() {
                    lo_a = mid;
                    lo_r = mid_r;
                } else {
                    hi_a = mid;
                }
            }
            roots.push(0.5 * (lo_a + hi_a));
        }
        prev = cur;
    }
    roots.into_iter().map(build).collect()
}

fn classify_point(jac: &DMatrix<f64>) -> (Vec<EigenvaluePair>, PointClass) {
    let eig = tangent_eigenvalues(jac);
    let pairs: Vec<EigenvaluePair> =
        eig.iter().map(|c| EigenvaluePair { re: c.re, im: c.im }).collect();
    if pairs.is_empty() {
        return (pairs, PointClass::Marginal);
    }
    let max_re = pairs.iter().map(|p| p.re).fold(f64::NEG_INFINITY, f64::max);
    let min_re = pairs.iter().map(|p| p.re).fold(f64::INFINITY, f64::min);
    let class = if max_re < -CLASS_BAND {
        PointClass::Attracting
    } else if max_re.abs() <= CLASS_BAND {
        PointClass::Marginal
    } else if min_re > CLASS_BAND {
        PointClass::Repelling
    } else {
        PointClass::Saddle
    };
    (pairs, class)
}

/// Finds fixed points of [`projected_rhs`] by damped Newton iteration from
/// the diagonal seed, the symmetric 4-cycle reduction (when enabled and
/// applicable), and random simplex starts. Points are deduplicated at L∞
/// distance 1e-6, re-verified fresh, classified by the tangent-space
/// eigenvalues of the numeric Jacobian, and returned sorted by residual and
/// then lexicographically. The diagonal always qualifies, so the result is
/// never empty.
pub fn find_stable_points(
    g: &Graph,
    lambda: f64,
    cfg: &SearchConfig,
) -> Result<StablePointSearch, StabilityError> {
    use rand::Rng;

    let k = g.node_count();
    let f = |y: &[f64]| projected_rhs(y, g, lambda);

    let mut seeds: Vec<Vec<f64>> = vec![vec![1.0 / k as f64; k]];
    if cfg.symmetric_ansatz {
        seeds.extend(ansatz_candidates(g, lambda));
    }
    let named_seeds = seeds.len();
    let starts: Vec<Vec<f64>> = crate::par::indexed_map(cfg.multistart, |r| {
        let mut rng = crate::sim::replication_rng(cfg.seed, r as u64);
        // Uniform on the simplex via normalized exponentials.
        let draws: Vec<f64> = (0..k).map(|_| -rng.gen::<f64>().ln()).collect();
        let total: f64 = draws.iter().sum();
        draws.into_iter().map(|d| d / total).collect()
    });
    seeds.extend(starts);

    let solved: Vec<Option<(Vec<f64>, f64)>> =
        crate::par::indexed_map(seeds.len(), |i| damped_newton(&seeds[i], &f, cfg.tol, cfg.max_iter));
    let mut dropped = 0usize;
    let mut found: Vec<(Vec<f64>, f64)> = Vec::new();
    for (idx, s) in solved.into_iter().enumerate() {
        match s {
            Some(hit) => found.push(hit),
            None => {
                // The diagonal and ansatz seeds are analytic roots; only
                // random starts count as droppable.
                if idx >= named_seeds {
                    dropped += 1;
                }
            }
        }
    }

    // Deterministic merge: sort by residual then lexicographic position,
    // dedup at L-infinity 1e-6.
    found.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap()
            .then_with(|| a.0.partial_cmp(&b.0).unwrap())
    });
    let mut unique: Vec<(Vec<f64>, f64)> = Vec::new();
    for (y, res) in found {
        let dup = unique.iter().any(|(u, _)| {
            u.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0_f64, f64::max) < 1e-6
        });
        if !dup {
            unique.push((y, res));
        }
    }

    let mut points = Vec::with_capacity(unique.len());
    for (y, _) in unique {
        let fresh = residual_norm(&f(&y));
        let jac = numeric_jacobian(f, &y, 1e-6)?;
        let (eigs, class) = classify_point(&jac);
        points.push(StablePoint {
            y,
            residual: fresh,
            tangent_eigenvalues: eigs,
            classification: class,
        });
    }
    points.sort_by(|a, b| {
        a.residual
            .partial_cmp(&b.residual)
            .unwrap()
            .then_with(|| a.y.partial_cmp(&b.y).unwrap())
    });
    Ok(StablePointSearch { points, dropped_starts: dropped })
}

/// A certificate for positive recurrence with inhomogeneous rates: a
/// nonnegative `p` whose service profile `μ_i = p_i·exp(−Σ_{j∈V_i} p_j)`
/// dominates the arrival rates with positive margin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StolyarWitness {
    pub p: Vec<f64>,
    pub mu: Vec<f64>,
    /// `min_i (μ_i − λ_i)`; the witness is valid iff this is positive.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StolyarConfig {
    pub multistart: usize,
    pub seed: u64,
    /// Coordinate-descent sweeps per start.
    pub sweeps: usize,
}

impl Default for StolyarConfig {
    fn default() -> Self {
        StolyarConfig { multistart: 16, seed: 0, sweeps: 400 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StolyarSearch {
    /// Present iff a positive margin was reached. Absence means "not found
    /// within budget" — the search is heuristic and never proves
    /// infeasibility.
    pub witness: Option<StolyarWitness>,
    pub best_margin: f64,
    pub evaluations: usize,
}

pub fn stolyar_mu(p: &[f64], g: &Graph) -> Vec<f64> {
    (0..p.len())
        .map(|i| {
            let s: f64 = g.closed_neighborhood(i).iter().map(|&j| p[j]).sum();
            p[i] * (-s).exp()
        })
        .collect()
}

fn stolyar_margin(p: &[f64], g: &Graph, lambda: &[f64]) -> f64 {
    stolyar_mu(p, g)
        .iter()
        .zip(lambda)
        .map(|(m, l)| m - l)
        .fold(f64::INFINITY, f64::min)
}

/// Best-effort maximization of `min_i (μ_i(p) − λ_i)` over `p ≥ 0` by
/// multistart coordinate search. Starts from the uniform profile `1/V_max`
/// plus random profiles; each start runs cyclic coordinate moves with a
/// shrinking step.
pub fn stolyar_search(g: &Graph, lambda: &[f64], cfg: &StolyarConfig) -> StolyarSearch {
    use rand::Rng;

    let k = g.node_count();
    let uniform = vec![1.0 / g.max_closed_degree() as f64; k];

    let run_start = |start: Vec<f64>| -> (Vec<f64>, f64, usize) {
        let mut p = start;
        let mut best = stolyar_margin(&p, g, lambda);
        let mut evals = 1usize;
        let mut step = 0.25;
        for _ in 0..cfg.sweeps {
            let mut improved = false;
            for i in 0..k {
                for dir in [1.0, -1.0] {
                    let candidate = (p[i] + dir * step).max(0.0);
                    if candidate == p[i] {
                        continue;
                    }
                    let old = p[i];
                    p[i] = candidate;
                    let m = stolyar_margin(&p, g, lambda);
                    evals += 1;
                    if m > best {
                        best = m;
                        improved = true;
                    } else {
                        p[i] = old;
                    }
                }
            }
            if !improved {
                step *= 0.5;
                if step < 1e-9 {
                    break;
                }
            }
        }
        (p, best, evals)
    };

    let results: Vec<(Vec<f64>, f64, usize)> =
        crate::par::indexed_map(cfg.multistart + 1, |idx| {
            if idx == 0 {
                run_start(uniform.clone())
            } else {
                let mut rng = crate::sim::replication_rng(cfg.seed, idx as u64);
                let start: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
                run_start(start)
            }
        });

    let evaluations = results.iter().map(|r| r.2).sum();
    let best = results
        .into_iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .expect("at least the uniform start");
    let witness = if best.1 > 0.0 {
        Some(StolyarWitness {
            mu: stolyar_mu(&best.0, g),
            p: best.0,
            margin: best.1,
        })
    } else {
        None
    };
    StolyarSearch { witness, best_margin: best.1, evaluations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{complete, cycle, from_edge_list_str, random_regular};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn e_inv() -> f64 {
        exp_neg_one()
    }

    #[test]
    fn projected_rhs_is_tangent_and_zero_at_uniform() {
        for g in [cycle(4).unwrap(), cycle(7).unwrap(), complete(5).unwrap()] {
            let k = g.node_count();
            let uniform = vec![1.0 / k as f64; k];
            let alpha = projected_rhs(&uniform, &g, 0.13);
            for a in &alpha {
                assert_abs_diff_eq!(*a, 0.0, epsilon = 1e-14);
            }
            let mut rng = crate::sim::replication_rng(1, 0);
            for _ in 0..200 {
                let draws: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
                let total: f64 = draws.iter().sum();
                let y: Vec<f64> = draws.iter().map(|d| d / total).collect();
                let alpha = projected_rhs(&y, &g, 0.05);
                let sum: f64 = alpha.iter().sum();
                assert_abs_diff_eq!(sum, 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn near_fixed_point_from_the_unbalanced_profile() {
        let g = cycle(4).unwrap();
        // Fixed points sit at (a, a, 1/2−a, 1/2−a): a ≈ 0.0011915 for rate
        // 0.001 and a ≈ 0.0127355 for rate 0.01 (the profile that rounds to
        // (0.01, 0.01, 0.49, 0.49)). Nearby evaluations give small residuals.
        let alpha = projected_rhs(&[0.0012, 0.0012, 0.4988, 0.4988], &g, 0.001);
        assert!(residual_norm(&alpha) < 5e-3, "residual {}", residual_norm(&alpha));
        let alpha = projected_rhs(&[0.01, 0.01, 0.49, 0.49], &g, 0.01);
        assert!(residual_norm(&alpha) < 5e-3, "residual {}", residual_norm(&alpha));
    }

    #[test]
    fn diagonal_spectrum_cycle4_frozen_values() {
        let g = cycle(4).unwrap();
        let mu = diagonal_spectrum(&g, 0.07).unwrap();
        assert_eq!(mu.len(), 4);
        assert_abs_diff_eq!(mu[0], 0.07 - e_inv() / 3.0, epsilon = 1e-14);
        let want_mu1 = -4.0 * e_inv() / 27.0 - 0.07 + e_inv() / 3.0;
        assert_abs_diff_eq!(mu[1], want_mu1, epsilon = 1e-14);
        assert!(mu[1] < 0.0, "0.07 is on the locally stable side");
        assert_abs_diff_eq!(mu[2], want_mu1, epsilon = 1e-14);
        assert_abs_diff_eq!(
            mu[3],
            -16.0 * e_inv() / 27.0 - 0.07 + e_inv() / 3.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn mu1_changes_sign_exactly_at_local_threshold() {
        let g = cycle(4).unwrap();
        let threshold = 5.0 / 27.0 * e_inv();
        let below = diagonal_spectrum(&g, threshold - 1e-9).unwrap();
        let above = diagonal_spectrum(&g, threshold + 1e-9).unwrap();
        assert!(below[1] > 0.0);
        assert!(above[1] < 0.0);
        assert_eq!(diagonal_verdict(&g, threshold - 1e-6).unwrap(), DiagonalStability::Unstable);
        assert_eq!(diagonal_verdict(&g, threshold + 1e-6).unwrap(), DiagonalStability::Stable);
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        for (g, lambda) in [
            (cycle(4).unwrap(), 0.04),
            (complete(5).unwrap(), 0.11),
            (random_regular(8, 3, 17).unwrap(), 0.07),
        ] {
            let k = g.node_count();
            let analytic = diagonal_jacobian_at_uniform(&g, lambda).unwrap();
            let fd = numeric_jacobian(
                |y| projected_rhs(y, &g, lambda),
                &vec![1.0 / k as f64; k],
                1e-5,
            )
            .unwrap();
            for i in 0..k {
                for j in 0..k {
                    assert_abs_diff_eq!(analytic[(i, j)], fd[(i, j)], epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn analytic_jacobian_eigenstructure_matches_mu_list() {
        let g = cycle(4).unwrap();
        let lambda = 0.05;
        let k = 4.0;
        let dalpha = diagonal_jacobian_at_uniform(&g, lambda).unwrap();
        // The all-ones vector is in the kernel (the μ0 mode sits along it).
        let ones = nalgebra::DVector::from_element(4, 1.0);
        for x in (&dalpha * ones).iter() {
            assert_abs_diff_eq!(*x, 0.0, epsilon = 1e-12);
        }
        // Tangent eigenvalues are K·μ_i.
        let mut got: Vec<f64> = tangent_eigenvalues(&dalpha).iter().map(|c| c.re).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want: Vec<f64> = diagonal_spectrum(&g, lambda).unwrap()[1..]
            .iter()
            .map(|m| m * k)
            .collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (g_, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(*g_, *w, epsilon = 1e-8);
        }
    }

    #[test]
    fn classify_cycle4_examples() {
        let g = cycle(4).unwrap();
        let v = classify(&g, &[0.10; 4]);
        assert!(v.fluid_stable, "0.10 < e^-1/3");
        assert_eq!(v.diagonal_locally_stable, DiagonalStability::Stable);
        assert_abs_diff_eq!(v.global_threshold, e_inv() / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            v.local_threshold.unwrap(),
            5.0 / 27.0 * e_inv(),
            epsilon = 1e-15
        );

        let v = classify(&g, &[0.001; 4]);
        assert!(v.fluid_stable);
        assert_eq!(v.diagonal_locally_stable, DiagonalStability::Unstable);

        let v = classify(&g, &[0.2; 4]);
        assert!(!v.fluid_stable);
        assert!(v.notes.iter().any(|n| n.contains("conjectured")));
    }

    #[test]
    fn classify_complete_graph_always_locally_stable() {
        for lambda in [1e-6, 0.01, 0.3] {
            let v = classify(&complete(6).unwrap(), &[lambda; 6]);
            assert_abs_diff_eq!(v.local_threshold.unwrap(), 0.0, epsilon = 1e-15);
            assert_eq!(v.diagonal_locally_stable, DiagonalStability::Stable);
        }
    }

    #[test]
    fn classify_falls_back_for_irregular_or_asymmetric() {
        let star = from_edge_list_str("4\n1 2\n1 3\n1 4\n").unwrap();
        let v = classify(&star, &[0.05; 4]);
        assert_eq!(v.diagonal_locally_stable, DiagonalStability::NotApplicable);
        assert_eq!(v.degree_used, 4);
        assert!(v.fluid_stable, "0.05 < e^-1/4");
        assert!(v.local_threshold.is_none());

        let v = classify(&cycle(4).unwrap(), &[0.01, 0.02, 0.01, 0.01]);
        assert_eq!(v.diagonal_locally_stable, DiagonalStability::NotApplicable);
        assert_eq!(v.degree_used, 3);
    }

    #[test]
    fn threshold_ordering_invariant() {
        for g in [cycle(4).unwrap(), cycle(7).unwrap(), complete(5).unwrap()] {
            let v = classify(&g, &[0.05; 7][..g.node_count()]);
            let local = v.local_threshold.unwrap();
            assert!(local <= v.global_threshold + 1e-15);
            let rep = spectral_report(&g, 0.05);
            if rep.spectral_gap > 0.0 {
                assert!(local < v.global_threshold);
            }
        }
    }

    #[test]
    fn diagonal_is_always_found() {
        for (g, lambda) in [
            (cycle(4).unwrap(), 0.05),
            (cycle(5).unwrap(), 0.2),
            (complete(4).unwrap(), 0.01),
        ] {
            let cfg = SearchConfig { multistart: 8, ..SearchConfig::default() };
            let out = find_stable_points(&g, lambda, &cfg).unwrap();
            let k = g.node_count();
            let uniform = vec![1.0 / k as f64; k];
            assert!(
                out.points.iter().any(|p| {
                    p.y.iter()
                        .zip(&uniform)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0_f64, f64::max)
                        < 1e-8
                }),
                "diagonal missing for K={k}"
            );
            for p in &out.points {
                assert!(p.residual <= cfg.tol, "stale residual {}", p.residual);
                assert_abs_diff_eq!(p.y.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn ansatz_reduction_cycle4_three_roots_small_lambda() {
        let g = cycle(4).unwrap();
        let out = find_stable_points(&g, 0.001, &SearchConfig::ansatz_only(3)).unwrap();
        assert_eq!(out.points.len(), 3, "points: {:#?}", out.points);
        let diagonal = out
            .points
            .iter()
            .find(|p| (p.y[0] - 0.25).abs() < 1e-8)
            .expect("diagonal present");
        assert!(
            !diagonal.classification.is_attracting(),
            "diagonal must be unstable at lambda = 0.001"
        );
        let off: Vec<&StablePoint> = out
            .points
            .iter()
            .filter(|p| (p.y[0] - 0.25).abs() >= 1e-8)
            .collect();
        assert_eq!(off.len(), 2);
        for p in off {
            assert_eq!(p.classification, PointClass::Attracting);
            let mut sorted = p.y.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            // Root of the reduction at rate 0.001, frozen from an
            // independent bracketing solve: a* = 0.001191500013.
            assert!((sorted[0] - 0.001191500013).abs() < 1e-7, "small pair: {sorted:?}");
            assert!((sorted[3] - 0.498808499987).abs() < 1e-7, "large pair: {sorted:?}");
        }
    }

    #[test]
    fn ansatz_reduction_cycle4_rate_001_gives_the_classical_profile() {
        // At rate 0.01 the unbalanced fixed points sit at a* = 0.012735514571,
        // the profile that rounds to (0.01, 0.01, 0.49, 0.49).
        let g = cycle(4).unwrap();
        let out = find_stable_points(&g, 0.01, &SearchConfig::ansatz_only(3)).unwrap();
        assert_eq!(out.points.len(), 3);
        let off: Vec<&StablePoint> = out
            .points
            .iter()
            .filter(|p| (p.y[0] - 0.25).abs() >= 1e-8)
            .collect();
        assert_eq!(off.len(), 2);
        for p in off {
            assert_eq!(p.classification, PointClass::Attracting);
            let mut sorted = p.y.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!((sorted[0] - 0.012735514571).abs() < 1e-7, "small pair: {sorted:?}");
            let reference = [0.01, 0.01, 0.49, 0.49];
            let mut sorted_ref = reference;
            sorted_ref.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let linf = sorted
                .iter()
                .zip(&sorted_ref)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            assert!(linf < 5e-3, "L-infinity to the classical profile: {linf}");
        }
    }

    #[test]
    fn ansatz_reduction_cycle4_only_diagonal_above_threshold() {
        let g = cycle(4).unwrap();
        // 0.07 exceeds 5/27 e^-1 ≈ 0.0681: the reduction has a single root.
        let out = find_stable_points(&g, 0.07, &SearchConfig::ansatz_only(3)).unwrap();
        assert_eq!(out.points.len(), 1);
        assert_abs_diff_eq!(out.points[0].y[0], 0.25, epsilon = 1e-9);
        assert_eq!(out.points[0].classification, PointClass::Attracting);
    }

    #[test]
    fn classify_single_node_diagonal_is_trivially_stable() {
        let v = classify(&complete(1).unwrap(), &[0.2]);
        assert_eq!(v.diagonal_locally_stable, DiagonalStability::Stable);
        assert!(v.fluid_stable, "0.2 < e^-1 on the single server");
        assert_eq!(diagonal_verdict(&complete(1).unwrap(), 0.2).unwrap(), DiagonalStability::Stable);
    }

    #[test]
    fn multistart_search_is_deterministic() {
        let g = cycle(4).unwrap();
        let cfg = SearchConfig { multistart: 24, seed: 9, ..SearchConfig::default() };
        let a = find_stable_points(&g, 0.03, &cfg).unwrap();
        let b = find_stable_points(&g, 0.03, &cfg).unwrap();
        assert_eq!(a.points.len(), b.points.len());
        assert_eq!(a.dropped_starts, b.dropped_starts);
        for (x, y) in a.points.iter().zip(&b.points) {
            assert_eq!(x.y, y.y);
            assert_eq!(x.residual, y.residual);
            assert_eq!(x.classification, y.classification);
        }
    }

    #[test]
    fn stolyar_uniform_witness_below_threshold() {
        let g = cycle(4).unwrap();
        // p = 1/V 1 gives mu = e^-1/V > lambda.
        let search = stolyar_search(&g, &[0.1; 4], &StolyarConfig::default());
        let w = search.witness.expect("witness exists below e^-1/V");
        assert!(w.margin > 0.0);
        let mu = stolyar_mu(&w.p, &g);
        for (m, l) in mu.iter().zip([0.1; 4]) {
            assert!(*m > l);
        }
    }

    #[test]
    fn stolyar_no_witness_at_rate_one() {
        // mu_i ≤ max_x x e^-x = e^-1 < 1, so no profile can dominate.
        let g = cycle(4).unwrap();
        let search = stolyar_search(&g, &[1.0; 4], &StolyarConfig::default());
        assert!(search.witness.is_none());
        assert!(search.best_margin <= 0.0);
    }

    #[test]
    fn stolyar_asymmetric_rates_witness() {
        let g = cycle(4).unwrap();
        let lambda = [0.11, 0.11, 0.05, 0.05];
        let search = stolyar_search(&g, &lambda, &StolyarConfig::default());
        let w = search.witness.expect("asymmetric witness");
        let mu = stolyar_mu(&w.p, &g);
        for (m, l) in mu.iter().zip(lambda) {
            assert!(*m > l, "mu {m} must dominate lambda {l}");
        }
    }
}
