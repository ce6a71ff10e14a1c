//! The deterministic fluid model of the workload.
//!
//! On large states the per-slot success probability `G_i` converges to the
//! homogeneous throughput function `G̃_i(z) = φ_i(z)·exp(−Σ_{j∈V_i} φ_j(z))`
//! with `φ_i(z) = z_i / Σ_{j∈V_i} z_j`, and the scaled workload follows
//!
//! ```text
//! z_i'(t) = λ_i − G̃_i(z(t)).
//! ```
//!
//! This module evaluates φ, the exact G, G̃, the right-hand side (single
//! graph or a probabilistic mixture of graphs on one node set), integrates
//! the equation with a fixed-step classical fourth-order scheme, and tracks
//! the Euclidean-norm Lyapunov channel `Σz²` along trajectories.
//!
//! Zero conventions: `φ_i = 0` whenever `z_i = 0`, hence `G̃_i = 0` and the
//! derivative is `λ_i` there. States where an entire closed neighborhood is
//! empty get the same continuous extension `z_i' = λ_i`; trajectories that
//! ever evaluate such a state are flagged, since the model's derivative
//! there is an open question rather than a theorem.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphMixture};
use crate::spectral::exp_neg_one;

#[derive(Debug, Error)]
pub enum FluidError {
    #[error("dimension mismatch: state has {state} entries, system expects {expected}")]
    DimensionMismatch { state: usize, expected: usize },
    #[error("initial state must be nonnegative with positive total mass")]
    EmptyInitialState,
    #[error("integrator step collapsed below {min_step:e} at t = {at}; right-hand side too rough")]
    StepCollapsed { at: f64, min_step: f64 },
    #[error("non-finite state at t = {at}")]
    NonFinite { at: f64 },
    #[error("lyapunov bound is proved for the symmetric case; graph is irregular")]
    IrregularGraph,
    #[error("step and horizon must be positive")]
    BadParams,
}

/// Per-node neighborhood load shares: `φ_i = z_i / Σ_{j∈V_i} z_j`, with
/// `φ_i = 0` when `z_i = 0`. Homogeneous of order zero.
pub fn phi(z: &[f64], g: &Graph) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    phi_into(z, g, &mut out);
    out
}

fn phi_into(z: &[f64], g: &Graph, out: &mut [f64]) {
    for i in 0..z.len() {
        if z[i] == 0.0 {
            out[i] = 0.0;
        } else {
            let s: f64 = g.closed_neighborhood(i).iter().map(|&j| z[j]).sum();
            out[i] = z[i] / s;
        }
    }
}

/// Exact per-slot success probability of Eq.-level dynamics at state `x`:
///
/// ```text
/// G_i(x) = (x_i/s_i)(1 − 1/s_i)^{x_i−1} · Π_{j∈V_i\{i}} (1 − 1/s_j)^{x_j},
/// ```
///
/// with `s_k = Σ_{l∈V_k} x_l` and `G_i = 0` when `x_i = 0`. Exact on integer
/// states; on fractional states the bases are clamped at zero and the result
/// to `[0, 1]`, a continuous extension used only off the lattice.
pub fn g_exact(x: &[f64], g: &Graph) -> Vec<f64> {
    let k = x.len();
    let sums: Vec<f64> = (0..k)
        .map(|i| g.closed_neighborhood(i).iter().map(|&j| x[j]).sum())
        .collect();
    (0..k)
        .map(|i| {
            if x[i] == 0.0 {
                return 0.0;
            }
            let base_i = (1.0 - 1.0 / sums[i]).max(0.0);
            let mut value = x[i] / sums[i] * base_i.powf(x[i] - 1.0);
            for j in g.open_neighbors(i) {
                if x[j] > 0.0 {
                    value *= (1.0 - 1.0 / sums[j]).max(0.0).powf(x[j]);
                }
            }
            value.clamp(0.0, 1.0)
        })
        .collect()
}

/// Large-state limit of [`g_exact`] along rays: `G̃_i = φ_i·exp(−Σ_{j∈V_i}φ_j)`.
/// Homogeneous of order zero and bounded by one.
pub fn g_tilde(z: &[f64], g: &Graph) -> Vec<f64> {
    let mut scratch = RhsScratch::new(z.len());
    let mut out = vec![0.0; z.len()];
    g_tilde_into(z, g, &mut scratch, &mut out);
    out
}

/// Scratch buffers for repeated right-hand-side evaluations.
struct RhsScratch {
    phi: Vec<f64>,
}

impl RhsScratch {
    fn new(k: usize) -> Self {
        RhsScratch { phi: vec![0.0; k] }
    }
}

/// Writes G̃ into `out`; returns true when some node had its whole closed
/// neighborhood at zero (the continuous-extension case).
fn g_tilde_into(z: &[f64], g: &Graph, scratch: &mut RhsScratch, out: &mut [f64]) -> bool {
    phi_into(z, g, &mut scratch.phi);
    let mut whole_neighborhood_zero = false;
    for (i, out_i) in out.iter_mut().enumerate() {
        if scratch.phi[i] == 0.0 {
            *out_i = 0.0;
            if g.closed_neighborhood(i).iter().all(|&j| z[j] == 0.0) {
                whole_neighborhood_zero = true;
            }
        } else {
            let exponent: f64 = g.closed_neighborhood(i).iter().map(|&j| scratch.phi[j]).sum();
            *out_i = scratch.phi[i] * (-exponent).exp();
        }
    }
    whole_neighborhood_zero
}

/// Fluid derivative `λ_i − G̃_i(z)`; always within `[λ_i − 1, λ_i]`.
pub fn fluid_rhs(z: &[f64], g: &Graph, lambda: &[f64]) -> Vec<f64> {
    let mut scratch = RhsScratch::new(z.len());
    let mut out = vec![0.0; z.len()];
    fluid_rhs_into(z, g, lambda, &mut scratch, &mut out);
    out
}

fn fluid_rhs_into(
    z: &[f64],
    g: &Graph,
    lambda: &[f64],
    scratch: &mut RhsScratch,
    out: &mut [f64],
) -> bool {
    let flag = g_tilde_into(z, g, scratch, out);
    for i in 0..z.len() {
        out[i] = lambda[i] - out[i];
    }
    flag
}

/// Mixture derivative `λ_i − Σ_k p_k G̃^k_i(z)` for random neighborhoods
/// drawn per slot from `mixture`.
pub fn fluid_rhs_mixture(z: &[f64], mixture: &GraphMixture, lambda: &[f64]) -> Vec<f64> {
    let k = z.len();
    let mut scratch = RhsScratch::new(k);
    let mut acc = vec![0.0; k];
    let mut tmp = vec![0.0; k];
    mixture_g_tilde_into(z, mixture, &mut scratch, &mut acc, &mut tmp);
    (0..k).map(|i| lambda[i] - acc[i]).collect()
}

fn mixture_g_tilde_into(
    z: &[f64],
    mixture: &GraphMixture,
    scratch: &mut RhsScratch,
    acc: &mut [f64],
    tmp: &mut [f64],
) -> bool {
    acc.fill(0.0);
    let mut flag = false;
    for (graph, &p) in mixture.graphs().iter().zip(mixture.probs()) {
        flag |= g_tilde_into(z, graph, scratch, tmp);
        for i in 0..z.len() {
            acc[i] += p * tmp[i];
        }
    }
    flag
}

/// What drives a fluid trajectory: one fixed graph or a per-slot random
/// mixture of graphs on the same node set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum FluidDynamics {
    Single(Graph),
    Mixture(GraphMixture),
}

impl FluidDynamics {
    pub fn node_count(&self) -> usize {
        match self {
            FluidDynamics::Single(g) => g.node_count(),
            FluidDynamics::Mixture(m) => m.node_count(),
        }
    }

    fn rhs_into(
        &self,
        z: &[f64],
        lambda: &[f64],
        scratch: &mut RhsScratch,
        acc: &mut [f64],
        tmp: &mut [f64],
    ) -> bool {
        match self {
            FluidDynamics::Single(g) => fluid_rhs_into(z, g, lambda, scratch, acc),
            FluidDynamics::Mixture(m) => {
                let flag = mixture_g_tilde_into(z, m, scratch, acc, tmp);
                for i in 0..z.len() {
                    acc[i] = lambda[i] - acc[i];
                }
                flag
            }
        }
    }
}

/// Integration setup: dynamics, rates, step, tolerances, horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FluidParams {
    pub dynamics: FluidDynamics,
    pub lambda: Vec<f64>,
    /// Base integrator step; default `1e-3 / K`.
    pub step: f64,
    /// Trajectory terminates as drained once `|z|₁ ≤ zero_tol`.
    pub zero_tol: f64,
    pub horizon: f64,
    /// Record every n-th accepted step (step 0 and the final step are always
    /// recorded). `None` picks a stride targeting about 4096 samples.
    pub record_stride: Option<usize>,
}

impl FluidParams {
    pub fn new(graph: Graph, lambda: Vec<f64>, horizon: f64) -> Self {
        let k = graph.node_count();
        FluidParams {
            dynamics: FluidDynamics::Single(graph),
            lambda,
            step: 1e-3 / k as f64,
            zero_tol: 1e-6,
            horizon,
            record_stride: None,
        }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn with_zero_tol(mut self, tol: f64) -> Self {
        self.zero_tol = tol;
        self
    }

    pub fn with_record_stride(mut self, stride: usize) -> Self {
        self.record_stride = Some(stride.max(1));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Termination {
    /// `|z|₁` fell to the zero tolerance at the recorded time.
    Drained { time: f64 },
    /// The horizon was reached with mass remaining.
    Horizon,
}

/// One recorded integration point, with the Lyapunov channel
/// `sum_sq = Σz_i²` and its analytic derivative `2Σz_i·z_i'`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FluidSample {
    pub t: f64,
    pub z: Vec<f64>,
    pub sum_sq: f64,
    pub d_sum_sq: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FluidTrajectory {
    pub samples: Vec<FluidSample>,
    pub termination: Termination,
    /// First time a coordinate was clamped at zero from below, if any.
    pub boundary_contact: Option<f64>,
    /// A state with an entire closed neighborhood at zero was evaluated;
    /// the derivative there is the continuous extension `λ_i`, a modeling
    /// choice rather than a proved limit.
    pub whole_neighborhood_zero: bool,
    /// Step actually used after any halvings.
    pub step_used: f64,
    pub step_halvings: u32,
}

impl FluidTrajectory {
    pub fn drained_time(&self) -> Option<f64> {
        match self.termination {
            Termination::Drained { time } => Some(time),
            Termination::Horizon => None,
        }
    }

    /// First recorded time with `|z|₁ ≤ level`, if any.
    pub fn first_time_below(&self, level: f64) -> Option<f64> {
        self.samples
            .iter()
            .find(|s| s.z.iter().sum::<f64>() <= level)
            .map(|s| s.t)
    }

    /// Linear interpolation between recorded samples. Past a drained
    /// terminal event the state is zero (the fluid model stays drained);
    /// past the horizon returns the last sample.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let k = self.samples[0].z.len();
        let last = self.samples.last().unwrap();
        if t >= last.t {
            return match self.termination {
                Termination::Drained { .. } => vec![0.0; k],
                Termination::Horizon => last.z.clone(),
            };
        }
        let idx = self.samples.partition_point(|s| s.t <= t);
        if idx == 0 {
            return self.samples[0].z.clone();
        }
        let (a, b) = (&self.samples[idx - 1], &self.samples[idx]);
        let w = if b.t > a.t { (t - a.t) / (b.t - a.t) } else { 0.0 };
        (0..k).map(|i| a.z[i] + w * (b.z[i] - a.z[i])).collect()
    }

    /// CSV rows `t, z_1..z_K, sum_sq, event`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let k = self.samples[0].z.len();
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=k).map(|i| format!("z{i}")))
            .chain(["sum_sq".to_string(), "d_sum_sq".to_string(), "event".to_string()])
            .collect();
        writeln!(w, "{}", header.join(","))?;
        let drained = self.drained_time();
        for (idx, s) in self.samples.iter().enumerate() {
            let event = if Some(s.t) == drained {
                "drained"
            } else if Some(s.t) == self.boundary_contact {
                "boundary"
            } else if idx + 1 == self.samples.len() {
                match self.termination {
                    Termination::Horizon => "horizon",
                    Termination::Drained { .. } => "drained",
                }
            } else {
                ""
            };
            let zs: Vec<String> = s.z.iter().map(|v| v.to_string()).collect();
            writeln!(
                w,
                "{},{},{},{},{}",
                s.t,
                zs.join(","),
                s.sum_sq,
                s.d_sum_sq,
                event
            )?;
        }
        Ok(())
    }

    /// JSON-lines export, one sample per line.
    pub fn write_jsonl<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

struct Stepper<'a> {
    params: &'a FluidParams,
    scratch: RhsScratch,
    tmp: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    probe: Vec<f64>,
    stage: Vec<f64>,
    flagged: bool,
}

impl<'a> Stepper<'a> {
    fn new(params: &'a FluidParams) -> Self {
        let k = params.dynamics.node_count();
        Stepper {
            params,
            scratch: RhsScratch::new(k),
            tmp: vec![0.0; k],
            k1: vec![0.0; k],
            k2: vec![0.0; k],
            k3: vec![0.0; k],
            k4: vec![0.0; k],
            probe: vec![0.0; k],
            stage: vec![0.0; k],
            flagged: false,
        }
    }

    fn rhs(&mut self, z: &[f64], out: &mut [f64]) {
        // Stage states may poke slightly below zero; the derivative is
        // evaluated on the clamped state, matching the clamped dynamics.
        self.stage.copy_from_slice(z);
        for v in &mut self.stage {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.flagged |= self.params.dynamics.rhs_into(
            &self.stage,
            &self.params.lambda,
            &mut self.scratch,
            out,
            &mut self.tmp,
        );
    }

    /// One classical fourth-order step from `z` over `h` into `out`.
    fn rk4(&mut self, z: &[f64], h: f64, out: &mut [f64]) {
        let k = z.len();
        let mut probe = std::mem::take(&mut self.probe);
        let mut k1 = std::mem::take(&mut self.k1);
        let mut k2 = std::mem::take(&mut self.k2);
        let mut k3 = std::mem::take(&mut self.k3);
        let mut k4 = std::mem::take(&mut self.k4);
        self.rhs(z, &mut k1);
        for i in 0..k {
            probe[i] = z[i] + 0.5 * h * k1[i];
        }
        self.rhs(&probe, &mut k2);
        for i in 0..k {
            probe[i] = z[i] + 0.5 * h * k2[i];
        }
        self.rhs(&probe, &mut k3);
        for i in 0..k {
            probe[i] = z[i] + h * k3[i];
        }
        self.rhs(&probe, &mut k4);
        for i in 0..k {
            out[i] = z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        self.probe = probe;
        self.k1 = k1;
        self.k2 = k2;
        self.k3 = k3;
        self.k4 = k4;
    }
}

/// Integrates the fluid equation from `z0` until drained or the horizon.
///
/// Classical fixed-step fourth-order integration; every step is verified by
/// step-doubling, and a disagreement above `1e-6` halves the step (down to
/// a floor, after which integration errors out). Coordinates are clamped at
/// zero from below; the right-hand side is continuous across `z_i = 0`, so
/// no per-coordinate event location is needed.
pub fn integrate(z0: &[f64], params: &FluidParams) -> Result<FluidTrajectory, FluidError> {
    let k = params.dynamics.node_count();
    if z0.len() != k {
        return Err(FluidError::DimensionMismatch { state: z0.len(), expected: k });
    }
    if z0.iter().any(|&v| v < 0.0) || z0.iter().sum::<f64>() <= 0.0 {
        return Err(FluidError::EmptyInitialState);
    }
    if params.step <= 0.0 || params.horizon <= 0.0 {
        return Err(FluidError::BadParams);
    }

    const STEP_TOL: f64 = 1e-6;
    let min_step = params.step / 2f64.powi(20);
    let mut stepper = Stepper::new(params);
    let mut h = params.step;
    let mut halvings = 0u32;

    let total_steps_estimate = (params.horizon / h).ceil() as usize;
    let stride = params
        .record_stride
        .unwrap_or_else(|| (total_steps_estimate / 4096).max(1));

    let mut z = z0.to_vec();
    let mut t = 0.0;
    let mut full = vec![0.0; k];
    let mut half = vec![0.0; k];
    let mut halfway = vec![0.0; k];
    let mut samples = Vec::new();
    let mut boundary_contact: Option<f64> = None;
    let mut step_index = 0usize;

    let record =
        |samples: &mut Vec<FluidSample>, stepper: &mut Stepper, z: &[f64], t: f64| {
            let mut rhs = vec![0.0; k];
            stepper.rhs(z, &mut rhs);
            let sum_sq: f64 = z.iter().map(|v| v * v).sum();
            let d_sum_sq: f64 = 2.0 * z.iter().zip(&rhs).map(|(zi, ri)| zi * ri).sum::<f64>();
            samples.push(FluidSample { t, z: z.to_vec(), sum_sq, d_sum_sq });
        };

    record(&mut samples, &mut stepper, &z, t);

    let termination = loop {
        if z.iter().sum::<f64>() <= params.zero_tol {
            break Termination::Drained { time: t };
        }
        if t >= params.horizon {
            break Termination::Horizon;
        }
        let h_eff = h.min(params.horizon - t);
        stepper.rk4(&z, h_eff, &mut full);
        stepper.rk4(&z, 0.5 * h_eff, &mut halfway);
        stepper.rk4(&halfway, 0.5 * h_eff, &mut half);
        let disagreement = full
            .iter()
            .zip(&half)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if disagreement > STEP_TOL {
            h = 0.5 * h_eff;
            halvings += 1;
            if h < min_step {
                return Err(FluidError::StepCollapsed { at: t, min_step });
            }
            continue;
        }
        for (zi, hi) in z.iter_mut().zip(&half) {
            *zi = *hi;
            if *zi < 0.0 {
                *zi = 0.0;
                boundary_contact.get_or_insert(t + h_eff);
            }
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(FluidError::NonFinite { at: t });
        }
        t += h_eff;
        step_index += 1;
        let drained_now = z.iter().sum::<f64>() <= params.zero_tol;
        let horizon_now = t >= params.horizon;
        if step_index.is_multiple_of(stride) || drained_now || horizon_now {
            record(&mut samples, &mut stepper, &z, t);
        }
        if drained_now {
            break Termination::Drained { time: t };
        }
        if horizon_now {
            break Termination::Horizon;
        }
    };

    // Make sure the terminal state is recorded.
    if samples.last().map(|s| s.t) != Some(t) {
        record(&mut samples, &mut stepper, &z, t);
    }

    Ok(FluidTrajectory {
        samples,
        termination,
        boundary_contact,
        whole_neighborhood_zero: stepper.flagged,
        step_used: h,
        step_halvings: halvings,
    })
}

/// Integrates many initial conditions, in parallel when the `parallel`
/// feature is on. Output order matches input order.
pub fn integrate_batch(
    starts: &[Vec<f64>],
    params: &FluidParams,
) -> Vec<Result<FluidTrajectory, FluidError>> {
    crate::par::indexed_map(starts.len(), |i| integrate(&starts[i], params))
}

/// The Euclidean Lyapunov channel at a point, symmetric case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovDerivative {
    /// `d/dt Σz_i² = 2 Σ z_i (λ − G̃_i(z))`.
    pub value: f64,
    /// `(λ − e⁻¹/V) Σz_i`; dominates `value` whenever `λ ≤ e⁻¹/V`.
    pub bound: f64,
}

/// Evaluates `d/dt Σz²` and the drift bound `(λ − e⁻¹/V)Σz` at `z` for a
/// regular graph with symmetric rate `lambda`. The inequality
/// `value ≤ bound` is the subcritical stability mechanism; it is guaranteed
/// for `λ ≤ e⁻¹/V` and positive `z`.
pub fn lyapunov_derivative(
    z: &[f64],
    g: &Graph,
    lambda: f64,
) -> Result<LyapunovDerivative, FluidError> {
    let v = g.regular_degree().ok_or(FluidError::IrregularGraph)? as f64;
    let gt = g_tilde(z, g);
    let total: f64 = z.iter().sum();
    let value = 2.0 * z.iter().zip(&gt).map(|(zi, gi)| zi * (lambda - gi)).sum::<f64>();
    let bound = (lambda - exp_neg_one() / v) * total;
    Ok(LyapunovDerivative { value, bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{complete, cycle, random_regular, GraphMixture};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e_inv() -> f64 {
        exp_neg_one()
    }

    #[test]
    fn phi_hand_values_on_cycle4() {
        let g = cycle(4).unwrap();
        let p = phi(&[1.0, 1.0, 2.0, 2.0], &g);
        let want = [0.25, 0.25, 0.4, 0.4];
        for (got, want) in p.iter().zip(want) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn phi_symmetric_on_diagonal() {
        for g in [cycle(5).unwrap(), complete(4).unwrap()] {
            let v = g.regular_degree().unwrap() as f64;
            let z = vec![2.7; g.node_count()];
            for p in phi(&z, &g) {
                assert_abs_diff_eq!(p, 1.0 / v, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn phi_and_g_tilde_homogeneous() {
        let g = cycle(7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let z: Vec<f64> = (0..7).map(|_| rng.gen_range(0.01..5.0)).collect();
            let scaled: Vec<f64> = z.iter().map(|v| v * 3.0).collect();
            for (a, b) in phi(&z, &g).iter().zip(phi(&scaled, &g)) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
            }
            for (a, b) in g_tilde(&z, &g).iter().zip(g_tilde(&scaled, &g)) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn phi_identity_and_aggregation() {
        let g = cycle(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let z: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..3.0)).collect();
            let p = phi(&z, &g);
            // φ_j · Σ_{i∈V_j} z_i = z_j
            for j in 0..4 {
                let s: f64 = g.closed_neighborhood(j).iter().map(|&i| z[i]).sum();
                assert_abs_diff_eq!(p[j] * s, z[j], epsilon = 1e-13);
            }
            // Σ_i z_i Σ_{j∈V_i} φ_j = Σ_j z_j
            let lhs: f64 = (0..4)
                .map(|i| {
                    z[i] * g.closed_neighborhood(i).iter().map(|&j| p[j]).sum::<f64>()
                })
                .sum();
            let rhs: f64 = z.iter().sum();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn g_exact_zero_and_single_node() {
        let g1 = complete(1).unwrap();
        for m in [1.0_f64, 2.0, 5.0, 40.0] {
            let got = g_exact(&[m], &g1)[0];
            let want = (1.0 - 1.0 / m).powf(m - 1.0);
            assert_abs_diff_eq!(got, want, epsilon = 1e-14);
        }
        let g = cycle(4).unwrap();
        assert_eq!(g_exact(&[0.0; 4], &g), vec![0.0; 4]);
    }

    #[test]
    fn g_exact_diagonal_formula() {
        let g = cycle(4).unwrap();
        let v = 3.0;
        for c in [1.0_f64, 2.0, 10.0, 100.0] {
            let got = g_exact(&[c; 4], &g);
            let want = 1.0 / v * (1.0 - 1.0 / (v * c)).powf(v * c - 1.0);
            for gi in got {
                assert_abs_diff_eq!(gi, want, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn g_tilde_diagonal_and_bounds() {
        let g = cycle(4).unwrap();
        for c in [0.1_f64, 1.0, 7.5] {
            for gi in g_tilde(&[c; 4], &g) {
                assert_abs_diff_eq!(gi, e_inv() / 3.0, epsilon = 1e-14);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let z: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..10.0)).collect();
            for gi in g_tilde(&z, &g) {
                assert!((0.0..=1.0).contains(&gi));
            }
        }
    }

    #[test]
    fn g_exact_converges_to_g_tilde_along_rays() {
        // |G_i(tz) − G̃_i(z)| · t z_i stays bounded as t grows; the constant
        // is estimated, never assumed.
        let g = cycle(4).unwrap();
        let z = [0.4, 0.9, 1.3, 0.2];
        let tilde = g_tilde(&z, &g);
        let mut products = Vec::new();
        for t in [10.0_f64, 1e2, 1e3, 1e4] {
            let scaled: Vec<f64> = z.iter().map(|v| v * t).collect();
            let exact = g_exact(&scaled, &g);
            let worst = (0..4)
                .map(|i| (exact[i] - tilde[i]).abs() * scaled[i])
                .fold(0.0_f64, f64::max);
            products.push(worst);
        }
        let estimate = products[0];
        for p in &products {
            assert!(*p <= 1.5 * estimate + 1e-9, "ray products {products:?}");
        }
    }

    #[test]
    fn rhs_bounds_and_boundary_coordinates() {
        let g = cycle(4).unwrap();
        let lambda = vec![0.3, 0.1, 0.2, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..300 {
            let z: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..5.0)).collect();
            let rhs = fluid_rhs(&z, &g, &lambda);
            for i in 0..4 {
                assert!(rhs[i] <= lambda[i] + 1e-15);
                assert!(rhs[i] >= lambda[i] - 1.0 - 1e-15);
                if z[i] == 0.0 {
                    assert_abs_diff_eq!(rhs[i], lambda[i], epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn rhs_on_diagonal_is_symmetric_offset() {
        let g = cycle(4).unwrap();
        let lambda = vec![0.2; 4];
        let rhs = fluid_rhs(&[3.0; 4], &g, &lambda);
        for r in rhs {
            assert_abs_diff_eq!(r, 0.2 - e_inv() / 3.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn mixture_rhs_reduces_and_averages() {
        let c4 = cycle(4).unwrap();
        let k4 = complete(4).unwrap();
        let lambda = vec![0.15; 4];
        let z = vec![1.0; 4];

        let single = GraphMixture::new(vec![c4.clone()], vec![1.0]).unwrap();
        let a = fluid_rhs_mixture(&z, &single, &lambda);
        let b = fluid_rhs(&z, &c4, &lambda);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-15);
        }

        let twin = GraphMixture::new(vec![c4.clone(), c4.clone()], vec![0.5, 0.5]).unwrap();
        for (x, y) in fluid_rhs_mixture(&z, &twin, &lambda).iter().zip(&b) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-15);
        }

        let mixed = GraphMixture::new(vec![c4, k4], vec![0.5, 0.5]).unwrap();
        let got = fluid_rhs_mixture(&z, &mixed, &lambda);
        let want = 0.15 - 0.5 * e_inv() / 3.0 - 0.5 * e_inv() / 4.0;
        for x in got {
            assert_abs_diff_eq!(x, want, epsilon = 1e-14);
        }
    }

    #[test]
    fn diagonal_orbit_is_exact_line() {
        // Supercritical on the diagonal: z(t) = z0 + (λ − e⁻¹/V) t · 1.
        let g = cycle(4).unwrap();
        let lambda = 0.2;
        let params = FluidParams::new(g, vec![lambda; 4], 5.0).with_record_stride(200);
        let traj = integrate(&[2.0; 4], &params).unwrap();
        let speed = lambda - e_inv() / 3.0;
        for s in &traj.samples {
            for zi in &s.z {
                assert_abs_diff_eq!(*zi, 2.0 + speed * s.t, epsilon = 1e-9);
            }
        }
        assert_eq!(traj.termination, Termination::Horizon);
    }

    #[test]
    fn subcritical_diagonal_drains_monotonically() {
        let g = cycle(4).unwrap();
        let params = FluidParams::new(g, vec![0.08; 4], 100.0);
        let traj = integrate(&[0.5; 4], &params).unwrap();
        assert!(traj.drained_time().is_some());
        let mut prev = f64::INFINITY;
        let mut prev_t = -1.0;
        for s in &traj.samples {
            // Trajectory invariants: strictly increasing time, nonnegative
            // coordinates, and (on the symmetric orbit) exact symmetry.
            assert!(s.t > prev_t);
            prev_t = s.t;
            assert!(s.z.iter().all(|&zi| zi >= 0.0));
            for zi in &s.z {
                assert_abs_diff_eq!(*zi, s.z[0], epsilon = 1e-12);
            }
            let total: f64 = s.z.iter().sum();
            assert!(total <= prev + 1e-12);
            prev = total;
        }
    }

    #[test]
    fn boundary_start_is_repelled_into_interior() {
        // All mass on one node: every other coordinate grows immediately and
        // the minimum stays positive until the drain event.
        let g = cycle(4).unwrap();
        let params = FluidParams::new(g, vec![0.1; 4], 2.0).with_record_stride(50);
        let traj = integrate(&[1.0, 0.0, 0.0, 0.0], &params).unwrap();
        assert!(traj.whole_neighborhood_zero, "node 3 starts fully empty");
        for s in traj.samples.iter().skip(1) {
            let min = s.z.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min > 0.0, "interior repulsion failed at t = {}", s.t);
        }
    }

    #[test]
    fn state_at_interpolates_and_extends() {
        let g = cycle(4).unwrap();
        let params = FluidParams::new(g, vec![0.05; 4], 50.0);
        let traj = integrate(&[0.3; 4], &params).unwrap();
        let mid = traj.state_at(0.05);
        assert_eq!(mid.len(), 4);
        if traj.drained_time().is_some() {
            assert_eq!(traj.state_at(1e9), vec![0.0; 4]);
        }
    }

    #[test]
    fn lyapunov_value_and_bound_on_and_off_diagonal() {
        let g = cycle(4).unwrap();
        let lambda = 0.1;
        let v = 3.0;
        // Diagonal: value = 2(λ − e⁻¹/V)Σz exactly.
        let z = vec![1.0; 4];
        let ld = lyapunov_derivative(&z, &g, lambda).unwrap();
        let total = 4.0;
        assert_abs_diff_eq!(
            ld.value,
            2.0 * (lambda - e_inv() / v) * total,
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(ld.bound, (lambda - e_inv() / v) * total, epsilon = 1e-14);
        assert!(ld.value <= ld.bound + 1e-14);
        // Random interior states, subcritical rate: value ≤ bound throughout.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let z: Vec<f64> = (0..4).map(|_| rng.gen_range(1e-3..4.0)).collect();
            let ld = lyapunov_derivative(&z, &g, lambda).unwrap();
            assert!(ld.value <= ld.bound + 1e-12);
        }
    }

    #[test]
    fn lyapunov_inequality_random_regular() {
        // (Σ z_i G̃_i) / Σ z_k ≥ e⁻¹/V on random regular graphs.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (k, d, seed) in [(8usize, 3usize, 1u64), (12, 5, 2), (10, 4, 3)] {
            let g = random_regular(k, d, seed).unwrap();
            let v = g.regular_degree().unwrap() as f64;
            for _ in 0..500 {
                let z: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-3..10.0)).collect();
                let gt = g_tilde(&z, &g);
                let num: f64 = z.iter().zip(&gt).map(|(a, b)| a * b).sum();
                let den: f64 = z.iter().sum();
                assert!(num / den >= e_inv() / v - 1e-12);
            }
        }
    }

    #[test]
    fn lyapunov_requires_regular_graph() {
        let star = crate::graph::from_edge_list_str("4\n1 2\n1 3\n1 4\n").unwrap();
        assert!(matches!(
            lyapunov_derivative(&[1.0; 4], &star, 0.1),
            Err(FluidError::IrregularGraph)
        ));
    }

    #[test]
    fn integrate_rejects_bad_input() {
        let g = cycle(4).unwrap();
        let params = FluidParams::new(g, vec![0.1; 4], 1.0);
        assert!(matches!(
            integrate(&[0.0; 4], &params),
            Err(FluidError::EmptyInitialState)
        ));
        assert!(matches!(
            integrate(&[1.0, 1.0], &params),
            Err(FluidError::DimensionMismatch { .. })
        ));
    }
}
