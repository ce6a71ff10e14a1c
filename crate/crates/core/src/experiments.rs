//! Cross-validation harness tying the exact simulator to the fluid theory:
//! scaled-path convergence, rate sweeps against the thresholds, boundary
//! repulsion of fluid trajectories, drain/growth rate checks, and a
//! total-variation mixing probe. Every experiment is a pure function of
//! `(config, seed)`; replications run on independent random streams and are
//! aggregated in a fixed order, so results do not depend on scheduling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fluid::{fluid_rhs, integrate, phi, FluidError, FluidParams};
use crate::graph::Graph;
use crate::sim::{step, ArrivalModel, SimError, WorkloadState};
use crate::spectral::{exp_neg_one, spectral_report};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
}

// ---------------------------------------------------------------------------
// Fluid-limit convergence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    /// Initial total masses; the workload starts from `round(scale · direction)`.
    pub scales: Vec<u64>,
    /// Direction of the initial condition; normalized to unit L¹ internally.
    pub direction: Vec<f64>,
    pub horizon: f64,
    pub grid_points: usize,
    pub reps: usize,
    pub seed: u64,
    /// Arrival model override; defaults to symmetric Poisson at the fluid rate.
    pub arrivals: Option<ArrivalModel>,
}

impl ConvergenceConfig {
    pub fn new(scales: Vec<u64>, direction: Vec<f64>, horizon: f64, reps: usize, seed: u64) -> Self {
        ConvergenceConfig {
            scales,
            direction,
            horizon,
            grid_points: 101,
            reps,
            seed,
            arrivals: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub scale: u64,
    /// Actual initial mass after rounding the direction.
    pub norm: u64,
    /// Per replication: sup over the grid of the L¹ gap between the scaled
    /// simulation path and the fluid trajectory from the same normalized start.
    pub gaps: Vec<f64>,
    pub median_gap: f64,
    /// Replications whose scaled path touched the boundary before the horizon.
    pub flagged_reps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub per_scale: Vec<ScaleRecord>,
    pub median_gaps: Vec<f64>,
}

impl ConvergenceRecord {
    pub fn medians_strictly_decreasing(&self) -> bool {
        self.median_gaps.windows(2).all(|w| w[1] < w[0])
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "scale,norm,rep,gap")?;
        for s in &self.per_scale {
            for (rep, gap) in s.gaps.iter().enumerate() {
                writeln!(w, "{},{},{},{}", s.scale, s.norm, rep, gap)?;
            }
        }
        Ok(())
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// For each scale `s`, starts the chain at `round(s·direction)`, rescales
/// time and space by the initial mass, and measures the sup-norm gap to
/// the fluid trajectory started at the same normalized point. The gap
/// medians are expected to fall as the scale grows.
pub fn fluid_limit_convergence(
    g: &Graph,
    lambda: f64,
    cfg: &ConvergenceConfig,
) -> Result<ConvergenceRecord, ExperimentError> {
    let k = g.node_count();
    if cfg.direction.len() != k {
        return Err(ExperimentError::Precondition(format!(
            "direction has {} entries, graph has {k}",
            cfg.direction.len()
        )));
    }
    if cfg.direction.iter().any(|&d| d < 0.0) || cfg.direction.iter().sum::<f64>() <= 0.0 {
        return Err(ExperimentError::Precondition(
            "direction must be nonnegative with positive mass".into(),
        ));
    }
    if cfg.scales.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ExperimentError::Precondition("scales must increase".into()));
    }
    let dir_total: f64 = cfg.direction.iter().sum();
    let direction: Vec<f64> = cfg.direction.iter().map(|d| d / dir_total).collect();
    let arrivals = cfg
        .arrivals
        .clone()
        .unwrap_or_else(|| ArrivalModel::poisson_symmetric(lambda, k));
    arrivals.validate(k)?;

    let grid: Vec<f64> = (0..cfg.grid_points)
        .map(|i| cfg.horizon * i as f64 / (cfg.grid_points - 1).max(1) as f64)
        .collect();

    let mut per_scale = Vec::with_capacity(cfg.scales.len());
    for (scale_idx, &scale) in cfg.scales.iter().enumerate() {
        let initial: Vec<u64> = direction
            .iter()
            .map(|d| (d * scale as f64).round() as u64)
            .collect();
        let norm: u64 = initial.iter().sum();
        if norm == 0 {
            return Err(ExperimentError::Precondition(format!(
                "scale {scale} rounds the direction to the empty state"
            )));
        }
        let slots = (norm as f64 * cfg.horizon).ceil() as u64;
        let z0: Vec<f64> = initial.iter().map(|&c| c as f64 / norm as f64).collect();
        let params = FluidParams::new(g.clone(), vec![lambda; k], cfg.horizon);
        let trajectory = integrate(&z0, &params)?;

        let results: Vec<(f64, bool)> = crate::par::indexed_map(cfg.reps, |rep| {
            let mut rng =
                crate::sim::replication_rng(cfg.seed.wrapping_add(scale_idx as u64), rep as u64);
            let mut state = WorkloadState::new(initial.clone());
            let mut w_at_slot = Vec::with_capacity(slots as usize + 1);
            w_at_slot.push(state.counts.clone());
            for _ in 0..slots {
                let (next, _) = step(&state, g, &arrivals, &mut rng);
                state = next;
                w_at_slot.push(state.counts.clone());
            }
            let mut gap = 0.0_f64;
            let mut touched_boundary = false;
            for &t in &grid {
                let slot = (norm as f64 * t).ceil() as usize;
                let w = &w_at_slot[slot.min(w_at_slot.len() - 1)];
                let z = trajectory.state_at(t);
                let d: f64 = (0..k)
                    .map(|i| (w[i] as f64 / norm as f64 - z[i]).abs())
                    .sum();
                gap = gap.max(d);
                if w.contains(&0) {
                    touched_boundary = true;
                }
            }
            (gap, touched_boundary)
        });
        let gaps: Vec<f64> = results.iter().map(|r| r.0).collect();
        let flagged = results.iter().filter(|r| r.1).count();
        per_scale.push(ScaleRecord {
            scale,
            norm,
            median_gap: median(&gaps),
            gaps,
            flagged_reps: flagged,
        });
    }
    let median_gaps = per_scale.iter().map(|s| s.median_gap).collect();
    Ok(ConvergenceRecord { per_scale, median_gaps })
}

// ---------------------------------------------------------------------------
// Rate sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub slots: u64,
    pub reps: usize,
    pub seed: u64,
    /// Initial workload; defaults to 100 users per node (a large state near
    /// the diagonal, which is what the growth-rate comparison wants).
    pub initial: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry {
    pub lambda: f64,
    pub label: String,
    /// Mean over replications of the per-slot average total workload.
    pub time_avg_total_workload: f64,
    /// Mean over replications of (|W(slots)| − |W(slots/2)|)/(slots/2).
    pub terminal_slope: f64,
    /// Fraction of replications that reached the bounded set {|W| ≤ K}.
    pub return_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    pub global_threshold: f64,
    pub local_threshold: f64,
}

impl SweepResult {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "lambda,label,time_avg_total_workload,terminal_slope,return_fraction"
        )?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{}",
                e.lambda, e.label, e.time_avg_total_workload, e.terminal_slope, e.return_fraction
            )?;
        }
        Ok(())
    }
}

/// Simulates the chain across a sorted λ grid and reports empirical
/// stability indicators next to the two thresholds. No transience claim is
/// made above `e⁻¹/V`; only growth slopes are reported.
pub fn lambda_sweep(
    g: &Graph,
    grid: &[f64],
    cfg: &SweepConfig,
) -> Result<SweepResult, ExperimentError> {
    let v = g.regular_degree().ok_or_else(|| {
        ExperimentError::Precondition("rate sweep needs a regular graph".into())
    })?;
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ExperimentError::Precondition(
            "lambda grid must be non-empty and sorted ascending".into(),
        ));
    }
    if grid[0] <= 0.0 {
        return Err(ExperimentError::Precondition("lambda_i > 0 required".into()));
    }
    let k = g.node_count();
    let report = spectral_report(g, grid[0]);
    let global = exp_neg_one() / v as f64;
    let local = report.local_threshold.expect("regular graph");
    let initial = cfg.initial.clone().unwrap_or_else(|| vec![100; k]);
    let thinning = (cfg.slots / 2).max(1);

    struct RepAggregate {
        mid_total: u64,
        final_total: u64,
        time_avg: f64,
        reached_bounded: bool,
    }

    let mut entries = Vec::with_capacity(grid.len());
    for (li, &lambda) in grid.iter().enumerate() {
        let arrivals = ArrivalModel::poisson_symmetric(lambda, k);
        // Inline loop instead of `simulate` so nothing per-slot is stored.
        let aggregates: Vec<RepAggregate> = crate::par::indexed_map(cfg.reps, |rep| {
            let mut rng = crate::sim::replication_rng(
                cfg.seed.wrapping_add(li as u64),
                rep as u64,
            );
            let mut state = WorkloadState::new(initial.clone());
            let mut mid_total = 0u64;
            let mut acc_total = 0.0f64;
            let mut reached_bounded = state.total() <= k as u64;
            for n in 1..=cfg.slots {
                let (next, _) = step(&state, g, &arrivals, &mut rng);
                state = next;
                acc_total += state.total() as f64;
                if state.total() <= k as u64 {
                    reached_bounded = true;
                }
                if n == thinning {
                    mid_total = state.total();
                }
            }
            RepAggregate {
                mid_total,
                final_total: state.total(),
                time_avg: acc_total / cfg.slots as f64,
                reached_bounded,
            }
        });
        let reps = cfg.reps as f64;
        let time_avg = aggregates.iter().map(|a| a.time_avg).sum::<f64>() / reps;
        let slope = aggregates
            .iter()
            .map(|a| {
                (a.final_total as f64 - a.mid_total as f64)
                    / (cfg.slots - thinning).max(1) as f64
            })
            .sum::<f64>()
            / reps;
        let returned =
            aggregates.iter().filter(|a| a.reached_bounded).count() as f64 / reps;
        let label = if (lambda - global).abs() <= 1e-12 {
            "critical — inconclusive".to_string()
        } else if lambda < global {
            "subcritical".to_string()
        } else {
            "above e^-1/V (transience conjectured; growth reported empirically)".to_string()
        };
        entries.push(SweepEntry {
            lambda,
            label,
            time_avg_total_workload: time_avg,
            terminal_slope: slope,
            return_fraction: returned,
        });
    }
    Ok(SweepResult { entries, global_threshold: global, local_threshold: local })
}

// ---------------------------------------------------------------------------
// Boundary repulsion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryConfig {
    /// Starting profiles, normalized to unit L¹; defaults to the extreme
    /// points (all mass on one node).
    pub starts: Option<Vec<Vec<f64>>>,
    pub horizon: f64,
    pub epsilons: Vec<f64>,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig {
            starts: None,
            horizon: 5.0,
            epsilons: vec![0.02, 0.05, 0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub epsilon: f64,
    /// Window start `c·ε` with `c = 1/(K(1−λ_*))`.
    pub window_start: f64,
    /// First time the total mass fell below `1 − ε` (window end).
    pub window_end: Option<f64>,
    /// Smallest coordinate observed inside the window.
    pub min_coordinate: f64,
    /// `min_coordinate / ε` — positive and bounded away from zero is the
    /// linear-envelope shape.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryStartReport {
    pub start: Vec<f64>,
    /// min_i z_i(t) > 0 at every sampled 0 < t before the drain/horizon.
    pub interior_positive: bool,
    pub envelope: Vec<EnvelopePoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub lambda_star: f64,
    /// `K₁ = 2/λ_* − 1`: domination ratio that forces neighbor growth.
    pub k1: f64,
    /// `K₂ = λ_*/2`: guaranteed growth speed of a dominated neighbor.
    pub k2: f64,
    /// Sampled states where a dominated neighbor's derivative failed to
    /// exceed K₂ (expected zero).
    pub derivative_violations: usize,
    pub per_start: Vec<BoundaryStartReport>,
}

impl BoundaryReport {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "start,epsilon,window_start,window_end,min_coordinate,ratio")?;
        for s in &self.per_start {
            let name = s
                .start
                .iter()
                .map(|v| format!("{v:.3}"))
                .collect::<Vec<_>>()
                .join("|");
            for e in &s.envelope {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    name,
                    e.epsilon,
                    e.window_start,
                    e.window_end.map(|t| t.to_string()).unwrap_or_default(),
                    e.min_coordinate,
                    e.ratio
                )?;
            }
        }
        Ok(())
    }
}

/// Integrates from boundary starts and verifies that every coordinate
/// becomes and stays positive up to the drain event, with the observed
/// lower envelope reported against the linear-in-ε shape. Also checks the
/// domination mechanism along the trajectories: whenever a coordinate
/// exceeds `K₁` times a neighbor, the neighbor's derivative exceeds `K₂`.
pub fn boundary_repulsion_check(
    g: &Graph,
    lambda: &[f64],
    cfg: &BoundaryConfig,
) -> Result<BoundaryReport, ExperimentError> {
    let k = g.node_count();
    let lambda_star = lambda.iter().cloned().fold(f64::INFINITY, f64::min);
    if lambda_star <= 0.0 {
        return Err(ExperimentError::Precondition("min lambda_i must be positive".into()));
    }
    let starts: Vec<Vec<f64>> = cfg.starts.clone().unwrap_or_else(|| {
        (0..k)
            .map(|i| {
                let mut e = vec![0.0; k];
                e[i] = 1.0;
                e
            })
            .collect()
    });
    let k1 = 2.0 / lambda_star - 1.0;
    let k2 = lambda_star / 2.0;
    let c = if lambda_star < 1.0 {
        1.0 / (k as f64 * (1.0 - lambda_star))
    } else {
        0.0 // every coordinate grows; the window starts immediately
    };

    let mut per_start = Vec::with_capacity(starts.len());
    let mut violations = 0usize;
    for start in starts {
        let total: f64 = start.iter().sum();
        if start.len() != k || total <= 0.0 {
            return Err(ExperimentError::Precondition("bad start profile".into()));
        }
        let z0: Vec<f64> = start.iter().map(|v| v / total).collect();
        let params = FluidParams::new(g.clone(), lambda.to_vec(), cfg.horizon)
            .with_record_stride(16);
        let traj = integrate(&z0, &params)?;
        let end_time = traj.drained_time().unwrap_or(cfg.horizon);

        let mut interior_positive = true;
        for s in &traj.samples {
            if s.t > 0.0 && s.t < end_time {
                let min = s.z.iter().cloned().fold(f64::INFINITY, f64::min);
                if min <= 0.0 {
                    interior_positive = false;
                }
            }
            // Domination check (skip the boundary start itself at t = 0).
            if s.t > 0.0 {
                let rhs = fluid_rhs(&s.z, g, lambda);
                for i in 0..k {
                    for j in g.open_neighbors(i) {
                        if s.z[i] > k1 * s.z[j] && s.z[i] > 0.0 && rhs[j] <= k2 - 1e-12 {
                            violations += 1;
                        }
                    }
                }
            }
        }

        let mut envelope = Vec::new();
        for &eps in &cfg.epsilons {
            let window_start = c * eps;
            let window_end = traj
                .samples
                .iter()
                .find(|s| s.z.iter().sum::<f64>() < 1.0 - eps)
                .map(|s| s.t);
            let cutoff = window_end.unwrap_or(end_time);
            let min_coordinate = traj
                .samples
                .iter()
                .filter(|s| s.t >= window_start && s.t < cutoff)
                .map(|s| s.z.iter().cloned().fold(f64::INFINITY, f64::min))
                .fold(f64::INFINITY, f64::min);
            if min_coordinate.is_finite() {
                envelope.push(EnvelopePoint {
                    epsilon: eps,
                    window_start,
                    window_end,
                    min_coordinate,
                    ratio: min_coordinate / eps,
                });
            }
        }
        per_start.push(BoundaryStartReport { start: z0, interior_positive, envelope });
    }
    Ok(BoundaryReport { lambda_star, k1, k2, derivative_violations: violations, per_start })
}

// ---------------------------------------------------------------------------
// Drain / growth rates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrainGrowthConfig {
    /// Number of random unit-L¹ interior starts for the subcritical mode.
    pub starts: usize,
    pub seed: u64,
    /// Horizon for the supercritical mode.
    pub growth_horizon: f64,
    /// Relative perturbation of the diagonal start in the supercritical mode.
    pub noise: f64,
}

impl Default for DrainGrowthConfig {
    fn default() -> Self {
        DrainGrowthConfig { starts: 100, seed: 0, growth_horizon: 1e3, noise: 0.01 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrainStart {
    pub start: Vec<f64>,
    pub drain_time: Option<f64>,
    pub within_bound: bool,
    /// max over interior samples of d/dt √(Σz²); must stay ≤ −ε/2 + tol.
    pub max_sqrt_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubcriticalReport {
    pub epsilon: f64,
    /// Drain deadline `2/ε + 10`.
    pub time_bound: f64,
    pub per_start: Vec<DrainStart>,
    pub all_within_bound: bool,
    pub all_rates_ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupercriticalReport {
    pub start: Vec<f64>,
    /// Target growth rate `λ − e⁻¹/V` per coordinate.
    pub target_rate: f64,
    /// Offset-corrected growth estimate `(z_i(T) − z_i(0))/T`.
    pub slope: Vec<f64>,
    pub max_rel_slope_err: f64,
    pub phi_final: Vec<f64>,
    pub max_phi_deviation: f64,
    /// False when λ is below the local threshold with an off-diagonal start:
    /// convergence of the profile is then not asserted, only observed.
    pub asserted: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DrainGrowthReport {
    Subcritical(SubcriticalReport),
    Supercritical(SupercriticalReport),
}

const SQRT_RATE_TOL: f64 = 1e-3;

/// Subcritical (`λ < e⁻¹/V`): every trajectory from a random unit start must
/// drain by `2/ε + 10` with the Euclidean norm falling at rate ≥ ε/2.
/// Supercritical: a slightly perturbed diagonal start must grow like
/// `(λ − e⁻¹/V)·t` with the profile converging to the balanced one.
pub fn drain_growth_check(
    g: &Graph,
    lambda: f64,
    cfg: &DrainGrowthConfig,
) -> Result<DrainGrowthReport, ExperimentError> {
    use rand::Rng;

    let v = g.regular_degree().ok_or_else(|| {
        ExperimentError::Precondition("drain/growth check needs a regular graph".into())
    })? as f64;
    let k = g.node_count();
    let global = exp_neg_one() / v;
    if (lambda - global).abs() <= 1e-12 {
        return Err(ExperimentError::Precondition(
            "rate equals e^-1/V: drain/growth dichotomy undefined".into(),
        ));
    }

    if lambda < global {
        let epsilon = global - lambda;
        let time_bound = 2.0 / epsilon + 10.0;
        let starts: Vec<Vec<f64>> = crate::par::indexed_map(cfg.starts, |r| {
            let mut rng = crate::sim::replication_rng(cfg.seed, r as u64);
            let draws: Vec<f64> = (0..k).map(|_| -rng.gen::<f64>().ln()).collect();
            let total: f64 = draws.iter().sum();
            draws.into_iter().map(|d| d / total).collect()
        });
        let params = FluidParams::new(g.clone(), vec![lambda; k], time_bound * 1.2);
        let reports: Vec<Result<DrainStart, ExperimentError>> =
            crate::par::indexed_map(starts.len(), |i| {
                let traj = integrate(&starts[i], &params)?;
                let drain_time = traj.drained_time();
                let mut max_rate = f64::NEG_INFINITY;
                for s in &traj.samples {
                    let interior = s.z.iter().all(|&zi| zi > 0.0);
                    if interior && s.sum_sq > 0.0 {
                        max_rate = max_rate.max(s.d_sum_sq / (2.0 * s.sum_sq.sqrt()));
                    }
                }
                Ok(DrainStart {
                    start: starts[i].clone(),
                    drain_time,
                    within_bound: drain_time.is_some_and(|t| t <= time_bound),
                    max_sqrt_rate: max_rate,
                })
            });
        let mut per_start = Vec::with_capacity(reports.len());
        for r in reports {
            per_start.push(r?);
        }
        let all_within_bound = per_start.iter().all(|s| s.within_bound);
        let all_rates_ok = per_start
            .iter()
            .all(|s| s.max_sqrt_rate <= -epsilon / 2.0 + SQRT_RATE_TOL);
        Ok(DrainGrowthReport::Subcritical(SubcriticalReport {
            epsilon,
            time_bound,
            per_start,
            all_within_bound,
            all_rates_ok,
        }))
    } else {
        let mut rng = crate::sim::replication_rng(cfg.seed, 0);
        let start: Vec<f64> = (0..k)
            .map(|_| 1.0 + cfg.noise * rng.gen_range(-1.0..1.0))
            .collect();
        let params = FluidParams::new(g.clone(), vec![lambda; k], cfg.growth_horizon);
        let traj = integrate(&start, &params)?;
        let last = traj.samples.last().expect("non-empty trajectory");
        let target = lambda - global;
        let slope: Vec<f64> = (0..k)
            .map(|i| (last.z[i] - start[i]) / last.t)
            .collect();
        let max_rel_slope_err = slope
            .iter()
            .map(|s| (s / target - 1.0).abs())
            .fold(0.0_f64, f64::max);
        let phi_final = phi(&last.z, g);
        let max_phi_deviation = phi_final
            .iter()
            .map(|p| (p - 1.0 / v).abs())
            .fold(0.0_f64, f64::max);
        let report = spectral_report(g, lambda);
        let local = report.local_threshold.expect("regular graph");
        let asserted = lambda > local;
        Ok(DrainGrowthReport::Supercritical(SupercriticalReport {
            start,
            target_rate: target,
            slope,
            max_rel_slope_err,
            phi_final,
            max_phi_deviation,
            asserted,
            note: (!asserted).then(|| {
                "rate below the local threshold: profile convergence is observed, \
                 not asserted"
                    .to_string()
            }),
        }))
    }
}

// ---------------------------------------------------------------------------
// Total-variation mixing probe
// ---------------------------------------------------------------------------

/// Empirical distribution over exact workload states.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EmpiricalDist {
    counts: BTreeMap<Vec<u64>, u64>,
    total: u64,
}

impl EmpiricalDist {
    pub fn add(&mut self, state: &[u64]) {
        *self.counts.entry(state.to_vec()).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn support_size(&self) -> usize {
        self.counts.len()
    }

    fn prob(&self, state: &[u64]) -> f64 {
        self.counts.get(state).map_or(0.0, |&c| c as f64 / self.total as f64)
    }

    /// Total mass on states with `|W|₁ ≤ radius`.
    pub fn mass_within(&self, radius: u64) -> f64 {
        self.counts
            .iter()
            .filter(|(s, _)| s.iter().sum::<u64>() <= radius)
            .map(|(_, &c)| c as f64)
            .sum::<f64>()
            / self.total as f64
    }

    /// Smallest radius covering at least `coverage` of the mass.
    pub fn coverage_radius(&self, coverage: f64) -> u64 {
        let mut by_radius: BTreeMap<u64, u64> = BTreeMap::new();
        for (s, &c) in &self.counts {
            *by_radius.entry(s.iter().sum()).or_insert(0) += c;
        }
        let mut acc = 0u64;
        for (&r, &c) in &by_radius {
            acc += c;
            if acc as f64 / self.total as f64 >= coverage {
                return r;
            }
        }
        by_radius.keys().last().copied().unwrap_or(0)
    }
}

/// Total variation between two empirical distributions, truncated to exact
/// states with `|W|₁ ≤ radius`; all remaining mass is lumped into one tail
/// bin. This lower-bounds the untruncated TV by at most the tail masses.
pub fn truncated_total_variation(a: &EmpiricalDist, b: &EmpiricalDist, radius: u64) -> f64 {
    let mut keys: Vec<&Vec<u64>> = a
        .counts
        .keys()
        .chain(b.counts.keys())
        .filter(|s| s.iter().sum::<u64>() <= radius)
        .collect();
    keys.sort();
    keys.dedup();
    let mut tv = 0.0;
    let mut a_in = 0.0;
    let mut b_in = 0.0;
    for key in keys {
        let pa = a.prob(key);
        let pb = b.prob(key);
        tv += (pa - pb).abs();
        a_in += pa;
        b_in += pb;
    }
    0.5 * (tv + ((1.0 - a_in) - (1.0 - b_in)).abs())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateProbeConfig {
    pub reps: usize,
    pub seed: u64,
    /// Initial workload; defaults to 25 users per node so the early
    /// checkpoints are genuinely far from stationarity.
    pub initial: Option<Vec<u64>>,
    pub reference_slots: u64,
    pub reference_burn_in: u64,
    pub reference_thin: u64,
    pub bootstrap: usize,
    /// Truncation coverage for the TV estimate.
    pub coverage: f64,
    pub arrivals: Option<ArrivalModel>,
}

impl Default for RateProbeConfig {
    fn default() -> Self {
        RateProbeConfig {
            reps: 800,
            seed: 0,
            initial: None,
            reference_slots: 2_000_000,
            reference_burn_in: 20_000,
            reference_thin: 20,
            bootstrap: 200,
            coverage: 0.99,
            arrivals: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateProbeReport {
    pub checkpoints: Vec<u64>,
    /// TV estimate at each checkpoint against the long-run reference.
    pub tv: Vec<f64>,
    /// Bootstrap standard error of each estimate (possibly widened; see
    /// `warnings`).
    pub band: Vec<f64>,
    pub truncation_radius: u64,
    /// Reference mass outside the truncation.
    pub tail_mass: f64,
    /// Adjacent checkpoints satisfy `tv[i+1] ≤ tv[i] + 2(band[i]+band[i+1])`.
    pub non_increasing_within_bands: bool,
    pub monotone_violations: usize,
    pub warnings: Vec<String>,
}

impl RateProbeReport {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "checkpoint,tv,band")?;
        for i in 0..self.checkpoints.len() {
            writeln!(w, "{},{},{}", self.checkpoints[i], self.tv[i], self.band[i])?;
        }
        Ok(())
    }
}

/// Estimates the total-variation distance between the law of `W(n)` at each
/// checkpoint and a long-run reference law (one long chain, burned in and
/// thinned), on a truncated state space. The sequence should be
/// non-increasing within error bands; the polynomial rate itself is not
/// certified at this scale.
pub fn convergence_rate_probe(
    g: &Graph,
    lambda: f64,
    checkpoints: &[u64],
    cfg: &RateProbeConfig,
) -> Result<RateProbeReport, ExperimentError> {
    use rand::Rng;

    let k = g.node_count();
    if checkpoints.is_empty() || checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ExperimentError::Precondition(
            "checkpoints must be non-empty and increasing".into(),
        ));
    }
    let arrivals = cfg
        .arrivals
        .clone()
        .unwrap_or_else(|| ArrivalModel::poisson_symmetric(lambda, k));
    arrivals.validate(k)?;
    if arrivals.rates().iter().any(|&r| r <= 0.0) {
        return Err(ExperimentError::Precondition("lambda_i > 0 required".into()));
    }
    if arrivals.all_zero_probability() <= 0.0 {
        return Err(ExperimentError::Precondition(
            "arrival model must put positive probability on all-zero slots \
             (ergodicity hypothesis)"
                .into(),
        ));
    }
    let initial = cfg.initial.clone().unwrap_or_else(|| vec![25; k]);
    let max_checkpoint = *checkpoints.last().unwrap();

    // Long-run reference: one chain, separate stream, burn-in then thinning.
    let mut reference = EmpiricalDist::default();
    {
        let mut rng = crate::sim::replication_rng(cfg.seed ^ 0x5eed_0ef0, 0);
        let mut state = WorkloadState::new(vec![0; k]);
        for n in 1..=cfg.reference_slots {
            let (next, _) = step(&state, g, &arrivals, &mut rng);
            state = next;
            if n > cfg.reference_burn_in && n % cfg.reference_thin == 0 {
                reference.add(&state.counts);
            }
        }
    }

    // Replicated chains: capture the state at every checkpoint.
    let snapshots: Vec<Vec<Vec<u64>>> = crate::par::indexed_map(cfg.reps, |rep| {
        let mut rng = crate::sim::replication_rng(cfg.seed, rep as u64 + 1);
        let mut state = WorkloadState::new(initial.clone());
        let mut states = Vec::with_capacity(checkpoints.len());
        let mut next_idx = 0;
        for n in 1..=max_checkpoint {
            let (next, _) = step(&state, g, &arrivals, &mut rng);
            state = next;
            if next_idx < checkpoints.len() && n == checkpoints[next_idx] {
                states.push(state.counts.clone());
                next_idx += 1;
            }
        }
        states
    });

    let radius = reference.coverage_radius(cfg.coverage);
    let tail_mass = 1.0 - reference.mass_within(radius);

    let dist_at = |checkpoint_idx: usize, rep_indices: &[usize]| {
        let mut d = EmpiricalDist::default();
        for &r in rep_indices {
            d.add(&snapshots[r][checkpoint_idx]);
        }
        d
    };
    let all_reps: Vec<usize> = (0..cfg.reps).collect();
    let tv: Vec<f64> = (0..checkpoints.len())
        .map(|ci| truncated_total_variation(&dist_at(ci, &all_reps), &reference, radius))
        .collect();

    // Bootstrap bands over replications (reference held fixed).
    let mut band = vec![0.0; checkpoints.len()];
    if cfg.bootstrap > 1 {
        let boots: Vec<Vec<f64>> = crate::par::indexed_map(cfg.bootstrap, |b| {
            let mut rng = crate::sim::replication_rng(cfg.seed ^ 0xb007, b as u64);
            let sample: Vec<usize> =
                (0..cfg.reps).map(|_| rng.gen_range(0..cfg.reps)).collect();
            (0..checkpoints.len())
                .map(|ci| truncated_total_variation(&dist_at(ci, &sample), &reference, radius))
                .collect()
        });
        for ci in 0..checkpoints.len() {
            let mean: f64 = boots.iter().map(|b| b[ci]).sum::<f64>() / cfg.bootstrap as f64;
            let var: f64 = boots
                .iter()
                .map(|b| (b[ci] - mean) * (b[ci] - mean))
                .sum::<f64>()
                / (cfg.bootstrap - 1) as f64;
            band[ci] = var.sqrt();
        }
    }

    let mut warnings = Vec::new();
    let bins = reference.support_size();
    if cfg.reps < 5 * bins {
        for b in &mut band {
            *b *= 2.0;
        }
        warnings.push(format!(
            "only {} replications for ~{} occupied states; error bands widened",
            cfg.reps, bins
        ));
    }
    let mut violations = 0;
    for i in 1..tv.len() {
        if tv[i] > tv[i - 1] + 2.0 * (band[i] + band[i - 1]) {
            violations += 1;
        }
    }
    Ok(RateProbeReport {
        checkpoints: checkpoints.to_vec(),
        tv,
        band,
        truncation_radius: radius,
        tail_mass,
        non_increasing_within_bands: violations == 0,
        monotone_violations: violations,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::cycle;

    #[test]
    fn convergence_gaps_shrink_with_scale() {
        let g = cycle(4).unwrap();
        let cfg = ConvergenceConfig::new(vec![100, 1000], vec![0.25; 4], 0.5, 8, 42);
        let rec = fluid_limit_convergence(&g, 0.1, &cfg).unwrap();
        assert_eq!(rec.median_gaps.len(), 2);
        assert!(
            rec.median_gaps[1] < rec.median_gaps[0],
            "gaps {:?}",
            rec.median_gaps
        );
    }

    #[test]
    fn convergence_deterministic_arrivals_track_diagonal_orbit() {
        let g = cycle(4).unwrap();
        let mut cfg = ConvergenceConfig::new(vec![100, 10_000], vec![0.25; 4], 0.5, 1, 0);
        cfg.arrivals = Some(ArrivalModel::Deterministic { counts: vec![1; 4] });
        let rec = fluid_limit_convergence(&g, 1.0, &cfg).unwrap();
        assert!(rec.median_gaps[1] < rec.median_gaps[0]);
        assert!(rec.median_gaps[1] < 0.05, "gaps {:?}", rec.median_gaps);
    }

    #[test]
    fn convergence_rejects_bad_configs() {
        let g = cycle(4).unwrap();
        let cfg = ConvergenceConfig::new(vec![1000, 100], vec![0.25; 4], 0.5, 4, 0);
        assert!(fluid_limit_convergence(&g, 0.1, &cfg).is_err());
        let cfg = ConvergenceConfig::new(vec![100], vec![0.5; 3], 0.5, 4, 0);
        assert!(fluid_limit_convergence(&g, 0.1, &cfg).is_err());
    }

    #[test]
    fn sweep_labels_and_slopes() {
        let g = cycle(4).unwrap();
        let cfg = SweepConfig { slots: 20_000, reps: 2, seed: 1, initial: Some(vec![50; 4]) };
        let result = lambda_sweep(&g, &[0.06, 0.16], &cfg).unwrap();
        assert_eq!(result.entries.len(), 2);
        assert_eq!(result.entries[0].label, "subcritical");
        assert!(result.entries[1].label.contains("conjectured"));
        assert!(result.entries[0].terminal_slope.abs() < 0.02);
        let expect = 4.0 * (0.16 - exp_neg_one() / 3.0);
        assert!(
            (result.entries[1].terminal_slope - expect).abs() < 0.2 * expect,
            "slope {} vs {expect}",
            result.entries[1].terminal_slope
        );
        assert!(result.entries[0].return_fraction > 0.9);
    }

    #[test]
    fn sweep_slope_matches_growth_rate_at_full_horizon() {
        // Above e^-1/V from a large near-diagonal state, the total-workload
        // slope approaches K(lambda - e^-1/V) within 10% by 10^5 slots.
        let g = cycle(4).unwrap();
        let cfg = SweepConfig {
            slots: 100_000,
            reps: 3,
            seed: 14,
            initial: Some(vec![100; 4]),
        };
        let result = lambda_sweep(&g, &[0.16], &cfg).unwrap();
        let expect = 4.0 * (0.16 - exp_neg_one() / 3.0);
        let got = result.entries[0].terminal_slope;
        assert!(
            (got - expect).abs() <= 0.1 * expect,
            "slope {got} vs {expect} (10% band)"
        );
    }

    #[test]
    fn experiments_are_reproducible_from_config_and_seed() {
        let g = cycle(4).unwrap();
        let cfg = ConvergenceConfig::new(vec![100, 400], vec![0.25; 4], 0.3, 6, 77);
        let a = fluid_limit_convergence(&g, 0.1, &cfg).unwrap();
        let b = fluid_limit_convergence(&g, 0.1, &cfg).unwrap();
        for (x, y) in a.per_scale.iter().zip(&b.per_scale) {
            assert_eq!(x.gaps, y.gaps);
        }
        let scfg = SweepConfig { slots: 2000, reps: 2, seed: 5, initial: Some(vec![20; 4]) };
        let s1 = lambda_sweep(&g, &[0.08, 0.2], &scfg).unwrap();
        let s2 = lambda_sweep(&g, &[0.08, 0.2], &scfg).unwrap();
        for (x, y) in s1.entries.iter().zip(&s2.entries) {
            assert_eq!(x.time_avg_total_workload, y.time_avg_total_workload);
            assert_eq!(x.terminal_slope, y.terminal_slope);
        }
    }

    #[test]
    fn sweep_critical_label() {
        let g = cycle(4).unwrap();
        let cfg = SweepConfig { slots: 100, reps: 1, seed: 0, initial: Some(vec![5; 4]) };
        let gth = exp_neg_one() / 3.0;
        let result = lambda_sweep(&g, &[gth], &cfg).unwrap();
        assert_eq!(result.entries[0].label, "critical — inconclusive");
    }

    #[test]
    fn boundary_repulsion_from_extreme_point() {
        let g = cycle(4).unwrap();
        let report =
            boundary_repulsion_check(&g, &[0.1; 4], &BoundaryConfig::default()).unwrap();
        assert_eq!(report.derivative_violations, 0);
        for s in &report.per_start {
            assert!(s.interior_positive, "start {:?}", s.start);
            for e in &s.envelope {
                assert!(e.min_coordinate > 0.0);
                assert!(e.ratio > 0.0);
            }
        }
    }

    #[test]
    fn boundary_symmetric_start_stays_symmetric() {
        let g = cycle(4).unwrap();
        let cfg = BoundaryConfig {
            starts: Some(vec![vec![0.25; 4]]),
            ..BoundaryConfig::default()
        };
        let report = boundary_repulsion_check(&g, &[0.1; 4], &cfg).unwrap();
        assert!(report.per_start[0].interior_positive);
    }

    #[test]
    fn drain_growth_subcritical_bounds() {
        let g = cycle(4).unwrap();
        let cfg = DrainGrowthConfig { starts: 10, ..DrainGrowthConfig::default() };
        match drain_growth_check(&g, 0.1, &cfg).unwrap() {
            DrainGrowthReport::Subcritical(rep) => {
                assert!(rep.all_within_bound);
                assert!(rep.all_rates_ok);
            }
            _ => panic!("expected subcritical report"),
        }
    }

    #[test]
    fn drain_growth_supercritical_rate() {
        let g = cycle(4).unwrap();
        let cfg = DrainGrowthConfig { growth_horizon: 200.0, ..DrainGrowthConfig::default() };
        match drain_growth_check(&g, 0.2, &cfg).unwrap() {
            DrainGrowthReport::Supercritical(rep) => {
                assert!(rep.asserted);
                assert!(rep.max_rel_slope_err < 0.05, "err {}", rep.max_rel_slope_err);
                assert!(rep.max_phi_deviation < 1e-3);
            }
            _ => panic!("expected supercritical report"),
        }
    }

    #[test]
    fn rate_probe_rejects_bad_arrival_hypotheses() {
        let g = cycle(4).unwrap();
        let mut cfg = RateProbeConfig { reps: 10, reference_slots: 1000, ..Default::default() };
        cfg.arrivals = Some(ArrivalModel::Deterministic { counts: vec![0; 4] });
        assert!(convergence_rate_probe(&g, 0.08, &[10, 20], &cfg).is_err());
        cfg.arrivals = Some(ArrivalModel::Deterministic { counts: vec![1; 4] });
        assert!(convergence_rate_probe(&g, 0.08, &[10, 20], &cfg).is_err());
    }

    #[test]
    fn reference_against_itself_has_zero_tv() {
        let mut a = EmpiricalDist::default();
        for s in [[0u64, 1], [1, 1], [0, 0], [2, 0], [0, 1]] {
            a.add(&s);
        }
        assert_eq!(truncated_total_variation(&a, &a, 10), 0.0);
        // Two independent halves of the same law: small but nonzero.
        let mut b = EmpiricalDist::default();
        for s in [[0u64, 1], [1, 1], [0, 0], [2, 0], [1, 1]] {
            b.add(&s);
        }
        let tv = truncated_total_variation(&a, &b, 10);
        assert!(tv > 0.0 && tv < 0.5);
    }
}
