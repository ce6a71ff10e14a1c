//! Exact slot-by-slot simulation of the workload Markov chain.
//!
//! State: a vector of user counts per node. One slot, starting from `W`:
//! every node `i` with users draws an attempt count
//! `N_i ~ Binomial(W_i, 1/Σ_{j∈V_i} W_j)` (independently across nodes given
//! `W`; zero trials when `W_i = 0`, no division by an empty neighborhood),
//! node `i` serves one user iff `N_i = 1` and no node of `V_i \ {i}`
//! attempted, then arrivals land:
//!
//! ```text
//! W_i(n) = W_i(n−1) + A_i(n) − S_i(n).
//! ```
//!
//! Sampling is exact (inversion / exact rejection for binomials, no normal
//! approximation) and reproducible: every public entry point seeds a
//! counter-based generator from `(seed, stream)`, one independent stream
//! per replication, so parallel batches are schedule-independent. Draw
//! order within a slot: mixture index (if any), attempts by node index,
//! arrivals by node index.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fluid::g_exact;
use crate::graph::{Graph, GraphMixture};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("arrival model covers {model} nodes, graph has {graph}")]
    NodeCountMismatch { model: usize, graph: usize },
    #[error("invalid arrival model: {0}")]
    BadArrivalModel(String),
    #[error("initial state has {state} entries, graph has {graph} nodes")]
    BadInitialState { state: usize, graph: usize },
    #[error("slots and thinning must be at least 1")]
    BadRunLength,
    #[error("trace too short: need {required} slots, have {available}")]
    TraceTooShort { required: u64, available: u64 },
    #[error("scaled paths need an unthinned trace (thinning = 1)")]
    NeedFullTrace,
    #[error("initial state must have positive total mass")]
    EmptyInitialState,
}

/// Workload Markov chain state: users per node at a slot index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadState {
    pub counts: Vec<u64>,
    pub slot: u64,
}

impl WorkloadState {
    pub fn new(counts: Vec<u64>) -> Self {
        WorkloadState { counts, slot: 0 }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Per-slot arrival distribution. Coordinates are independent across slots
/// always, and across nodes except for the broadcast variants (one draw
/// shared by all nodes, for dependent-coordinate inputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum ArrivalModel {
    Poisson { rates: Vec<f64> },
    Bernoulli { rates: Vec<f64> },
    /// Fixed number of arrivals per node per slot.
    Deterministic { counts: Vec<u64> },
    Zero { nodes: usize },
    BroadcastPoisson { rate: f64, nodes: usize },
    BroadcastBernoulli { rate: f64, nodes: usize },
}

impl ArrivalModel {
    /// Symmetric Poisson arrivals at rate `lambda` on `nodes` nodes.
    pub fn poisson_symmetric(lambda: f64, nodes: usize) -> Self {
        ArrivalModel::Poisson { rates: vec![lambda; nodes] }
    }

    pub fn node_count(&self) -> usize {
        match self {
            ArrivalModel::Poisson { rates } | ArrivalModel::Bernoulli { rates } => rates.len(),
            ArrivalModel::Deterministic { counts } => counts.len(),
            ArrivalModel::Zero { nodes }
            | ArrivalModel::BroadcastPoisson { nodes, .. }
            | ArrivalModel::BroadcastBernoulli { nodes, .. } => *nodes,
        }
    }

    /// Mean arrivals per node per slot.
    pub fn rates(&self) -> Vec<f64> {
        match self {
            ArrivalModel::Poisson { rates } | ArrivalModel::Bernoulli { rates } => rates.clone(),
            ArrivalModel::Deterministic { counts } => {
                counts.iter().map(|&c| c as f64).collect()
            }
            ArrivalModel::Zero { nodes } => vec![0.0; *nodes],
            ArrivalModel::BroadcastPoisson { rate, nodes }
            | ArrivalModel::BroadcastBernoulli { rate, nodes } => vec![*rate; *nodes],
        }
    }

    /// Probability that a slot brings zero arrivals everywhere.
    pub fn all_zero_probability(&self) -> f64 {
        match self {
            ArrivalModel::Poisson { rates } => (-rates.iter().sum::<f64>()).exp(),
            ArrivalModel::Bernoulli { rates } => rates.iter().map(|r| 1.0 - r).product(),
            ArrivalModel::Deterministic { counts } => {
                if counts.iter().all(|&c| c == 0) {
                    1.0
                } else {
                    0.0
                }
            }
            ArrivalModel::Zero { .. } => 1.0,
            ArrivalModel::BroadcastPoisson { rate, .. } => (-rate).exp(),
            ArrivalModel::BroadcastBernoulli { rate, .. } => 1.0 - rate,
        }
    }

    pub fn validate(&self, graph_nodes: usize) -> Result<(), SimError> {
        if self.node_count() != graph_nodes {
            return Err(SimError::NodeCountMismatch {
                model: self.node_count(),
                graph: graph_nodes,
            });
        }
        let positive = |rates: &[f64]| {
            if rates.iter().any(|&r| r <= 0.0 || !r.is_finite()) {
                Err(SimError::BadArrivalModel(
                    "stochastic arrival rates must satisfy lambda_i > 0".into(),
                ))
            } else {
                Ok(())
            }
        };
        match self {
            ArrivalModel::Poisson { rates } => positive(rates),
            ArrivalModel::Bernoulli { rates } => {
                positive(rates)?;
                if rates.iter().any(|&r| r > 1.0) {
                    return Err(SimError::BadArrivalModel(
                        "bernoulli rates must be at most 1".into(),
                    ));
                }
                Ok(())
            }
            ArrivalModel::Deterministic { .. } | ArrivalModel::Zero { .. } => Ok(()),
            ArrivalModel::BroadcastPoisson { rate, .. } => positive(&[*rate]),
            ArrivalModel::BroadcastBernoulli { rate, .. } => {
                positive(&[*rate])?;
                if *rate > 1.0 {
                    return Err(SimError::BadArrivalModel(
                        "bernoulli rates must be at most 1".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut Vec<u64>) {
        out.clear();
        match self {
            ArrivalModel::Poisson { rates } => {
                for &r in rates {
                    let draw: f64 = Poisson::new(r).unwrap().sample(rng);
                    out.push(draw as u64);
                }
            }
            ArrivalModel::Bernoulli { rates } => {
                for &r in rates {
                    out.push(Bernoulli::new(r).unwrap().sample(rng) as u64);
                }
            }
            ArrivalModel::Deterministic { counts } => out.extend_from_slice(counts),
            ArrivalModel::Zero { nodes } => out.resize(*nodes, 0),
            ArrivalModel::BroadcastPoisson { rate, nodes } => {
                let draw: f64 = Poisson::new(*rate).unwrap().sample(rng);
                out.resize(*nodes, draw as u64);
            }
            ArrivalModel::BroadcastBernoulli { rate, nodes } => {
                let draw = Bernoulli::new(*rate).unwrap().sample(rng) as u64;
                out.resize(*nodes, draw);
            }
        }
    }
}

/// Everything that happened in one slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub arrivals: Vec<u64>,
    pub attempts: Vec<u64>,
    /// 0/1 per node; `successes[i] = 1` iff `attempts[i] = 1` and no open
    /// neighbor attempted.
    pub successes: Vec<u8>,
    /// Which mixture graph governed the slot, for random-neighborhood runs.
    pub graph_index: Option<usize>,
}

/// The counter-based generator used everywhere; `stream` indexes an
/// independent substream of the same seed.
pub fn replication_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_attempts<R: Rng>(w: &[u64], g: &Graph, rng: &mut R, out: &mut Vec<u64>) {
    out.clear();
    for i in 0..w.len() {
        if w[i] == 0 {
            out.push(0);
            continue;
        }
        let neighborhood_load: u64 = g.closed_neighborhood(i).iter().map(|&j| w[j]).sum();
        let p = 1.0 / neighborhood_load as f64;
        out.push(Binomial::new(w[i], p).unwrap().sample(rng));
    }
}

fn successes_from_attempts(attempts: &[u64], g: &Graph, out: &mut Vec<u8>) {
    out.clear();
    for i in 0..attempts.len() {
        let ok = attempts[i] == 1 && g.open_neighbors(i).all(|j| attempts[j] == 0);
        out.push(ok as u8);
    }
}

/// Advances the chain one slot on a fixed graph. Never fails: every integer
/// state is legal (counts saturating at u64::MAX abort at the [`simulate`]
/// level instead).
pub fn step<R: Rng>(
    w: &WorkloadState,
    g: &Graph,
    arrivals: &ArrivalModel,
    rng: &mut R,
) -> (WorkloadState, SlotOutcome) {
    let mut attempts = Vec::with_capacity(w.counts.len());
    let mut succ = Vec::with_capacity(w.counts.len());
    let mut arr = Vec::with_capacity(w.counts.len());
    sample_attempts(&w.counts, g, rng, &mut attempts);
    successes_from_attempts(&attempts, g, &mut succ);
    arrivals.sample_into(rng, &mut arr);
    let counts: Vec<u64> = (0..w.counts.len())
        .map(|i| w.counts[i].saturating_add(arr[i]) - succ[i] as u64)
        .collect();
    (
        WorkloadState { counts, slot: w.slot + 1 },
        SlotOutcome { arrivals: arr, attempts, successes: succ, graph_index: None },
    )
}

/// One slot under random neighborhoods: draws a mixture index, then steps
/// on that graph.
pub fn step_mixture<R: Rng>(
    w: &WorkloadState,
    mixture: &GraphMixture,
    arrivals: &ArrivalModel,
    rng: &mut R,
) -> (WorkloadState, SlotOutcome) {
    let idx = mixture.index_for(rng.gen::<f64>());
    let (state, mut outcome) = step(w, &mixture.graphs()[idx], arrivals, rng);
    outcome.graph_index = Some(idx);
    (state, outcome)
}

/// Expected one-slot change `λ − G(x)` from state `x`: the `i`-th component
/// is `λ_i` when `x_i = 0` and otherwise subtracts the exact success
/// probability of [`g_exact`].
pub fn analytic_drift(x: &[u64], g: &Graph, lambda: &[f64]) -> Vec<f64> {
    let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let gx = g_exact(&xf, g);
    lambda.iter().zip(gx).map(|(l, gi)| l - gi).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub slot: u64,
    /// State after the slot.
    pub w: Vec<u64>,
    pub outcome: SlotOutcome,
}

/// Returns to the bounded set `{|W| ≤ threshold}`, a positive-recurrence
/// proxy (the all-zero state itself can be rare at moderate rates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedSetReturns {
    pub threshold: u64,
    /// Completed excursions (left the set, later re-entered).
    pub completed: u64,
    pub mean_return_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub slots: u64,
    pub time_avg_total_workload: f64,
    /// Successes per node divided by slots.
    pub per_node_throughput: Vec<f64>,
    pub zero_state_visits: u64,
    pub bounded_returns: BoundedSetReturns,
    pub final_counts: Vec<u64>,
}

/// A simulation run: initial state, recorded slots (every `thinning`-th,
/// plus the last), and summary statistics over *all* slots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trace {
    pub initial: Vec<u64>,
    pub thinning: u64,
    pub records: Vec<TraceRecord>,
    pub summary: TraceSummary,
    /// Slot at which the run aborted on count saturation, if it did.
    pub aborted_at: Option<u64>,
}

impl Trace {
    /// State after slot `n` (`n = 0` is the initial state). Only available
    /// on unthinned traces.
    pub fn state_after(&self, n: u64) -> Option<&[u64]> {
        if n == 0 {
            return Some(&self.initial);
        }
        if self.thinning != 1 {
            return None;
        }
        self.records.get(n as usize - 1).map(|r| r.w.as_slice())
    }

    /// JSON-lines export: one recorded slot per line.
    pub fn write_jsonl<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// One-row CSV of the summary statistics.
    pub fn write_summary_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let k = self.summary.per_node_throughput.len();
        let mut header = vec![
            "slots".to_string(),
            "time_avg_total_workload".to_string(),
            "zero_state_visits".to_string(),
            "bounded_returns_completed".to_string(),
            "mean_return_time".to_string(),
        ];
        header.extend((1..=k).map(|i| format!("throughput_{i}")));
        out.write_record(&header)?;
        let mut row = vec![
            self.summary.slots.to_string(),
            self.summary.time_avg_total_workload.to_string(),
            self.summary.zero_state_visits.to_string(),
            self.summary.bounded_returns.completed.to_string(),
            self.summary
                .bounded_returns
                .mean_return_time
                .map(|t| t.to_string())
                .unwrap_or_default(),
        ];
        row.extend(self.summary.per_node_throughput.iter().map(|t| t.to_string()));
        out.write_record(&row)?;
        out.flush()?;
        Ok(())
    }
}

struct SummaryAccumulator {
    node_count: usize,
    total_workload_sum: f64,
    successes: Vec<u64>,
    zero_visits: u64,
    inside: bool,
    left_at: Option<u64>,
    completed: u64,
    return_time_sum: u64,
    threshold: u64,
}

impl SummaryAccumulator {
    fn new(initial: &[u64]) -> Self {
        let threshold = initial.len() as u64;
        let total: u64 = initial.iter().sum();
        SummaryAccumulator {
            node_count: initial.len(),
            total_workload_sum: 0.0,
            successes: vec![0; initial.len()],
            zero_visits: 0,
            inside: total <= threshold,
            left_at: None,
            completed: 0,
            return_time_sum: 0,
            threshold,
        }
    }

    fn observe(&mut self, slot: u64, w: &[u64], outcome: &SlotOutcome) {
        let total: u64 = w.iter().sum();
        self.total_workload_sum += total as f64;
        for (acc, &s) in self.successes.iter_mut().zip(&outcome.successes) {
            *acc += s as u64;
        }
        if total == 0 {
            self.zero_visits += 1;
        }
        let now_inside = total <= self.threshold;
        if self.inside && !now_inside {
            self.left_at = Some(slot);
        } else if !self.inside && now_inside {
            if let Some(left) = self.left_at.take() {
                self.completed += 1;
                self.return_time_sum += slot - left;
            }
        }
        self.inside = now_inside;
    }

    fn finish(self, slots_run: u64, final_counts: Vec<u64>) -> TraceSummary {
        let slots = slots_run.max(1);
        TraceSummary {
            slots: slots_run,
            time_avg_total_workload: self.total_workload_sum / slots as f64,
            per_node_throughput: self
                .successes
                .iter()
                .map(|&s| s as f64 / slots as f64)
                .collect(),
            zero_state_visits: self.zero_visits,
            bounded_returns: BoundedSetReturns {
                threshold: self.node_count as u64,
                completed: self.completed,
                mean_return_time: if self.completed > 0 {
                    Some(self.return_time_sum as f64 / self.completed as f64)
                } else {
                    None
                },
            },
            final_counts,
        }
    }
}

fn run_with<F>(
    initial: &[u64],
    slots: u64,
    thinning: u64,
    mut advance: F,
) -> Result<Trace, SimError>
where
    F: FnMut(&WorkloadState) -> (WorkloadState, SlotOutcome),
{
    if slots == 0 || thinning == 0 {
        return Err(SimError::BadRunLength);
    }
    let mut state = WorkloadState::new(initial.to_vec());
    let mut acc = SummaryAccumulator::new(initial);
    let mut records = Vec::new();
    let mut aborted_at = None;
    for n in 1..=slots {
        let (next, outcome) = advance(&state);
        // Saturation means the +arrivals addition clipped; the recursion no
        // longer holds, so the run stops here and the trace is flagged.
        let saturated = next
            .counts
            .iter()
            .zip(&state.counts)
            .zip(&outcome.arrivals)
            .zip(&outcome.successes)
            .any(|(((new, old), &a), &s)| {
                (*new as u128) != *old as u128 + a as u128 - s as u128
            });
        if saturated {
            aborted_at = Some(n);
            break;
        }
        state = next;
        acc.observe(n, &state.counts, &outcome);
        if n % thinning == 0 || n == slots {
            records.push(TraceRecord { slot: n, w: state.counts.clone(), outcome });
        }
    }
    let slots_run = state.slot;
    Ok(Trace {
        initial: initial.to_vec(),
        thinning,
        records,
        summary: acc.finish(slots_run, state.counts),
        aborted_at,
    })
}

/// Runs `slots` slots on a fixed graph from `initial`, recording every
/// `thinning`-th slot. Reproducible: the run is a pure function of
/// `(graph, arrivals, slots, seed, initial, thinning)`.
pub fn simulate(
    g: &Graph,
    arrivals: &ArrivalModel,
    slots: u64,
    seed: u64,
    initial: &[u64],
    thinning: u64,
) -> Result<Trace, SimError> {
    arrivals.validate(g.node_count())?;
    if initial.len() != g.node_count() {
        return Err(SimError::BadInitialState { state: initial.len(), graph: g.node_count() });
    }
    let mut rng = replication_rng(seed, 0);
    run_with(initial, slots, thinning, move |w| step(w, g, arrivals, &mut rng))
}

/// One replication of [`simulate`] on a chosen substream: `stream = 0`
/// coincides with `simulate`, and [`simulate_batch`] runs streams `0..reps`.
pub fn simulate_stream(
    g: &Graph,
    arrivals: &ArrivalModel,
    slots: u64,
    seed: u64,
    stream: u64,
    initial: &[u64],
    thinning: u64,
) -> Result<Trace, SimError> {
    arrivals.validate(g.node_count())?;
    if initial.len() != g.node_count() {
        return Err(SimError::BadInitialState { state: initial.len(), graph: g.node_count() });
    }
    let mut rng = replication_rng(seed, stream);
    run_with(initial, slots, thinning, move |w| step(w, g, arrivals, &mut rng))
}

/// [`simulate`] under per-slot random neighborhoods.
pub fn simulate_mixture(
    mixture: &GraphMixture,
    arrivals: &ArrivalModel,
    slots: u64,
    seed: u64,
    initial: &[u64],
    thinning: u64,
) -> Result<Trace, SimError> {
    arrivals.validate(mixture.node_count())?;
    if initial.len() != mixture.node_count() {
        return Err(SimError::BadInitialState {
            state: initial.len(),
            graph: mixture.node_count(),
        });
    }
    let mut rng = replication_rng(seed, 0);
    run_with(initial, slots, thinning, move |w| {
        step_mixture(w, mixture, arrivals, &mut rng)
    })
}

/// Independent replications on substreams `0..reps` of `seed`; parallel
/// under the `parallel` feature, with output order fixed by replication
/// index either way.
pub fn simulate_batch(
    g: &Graph,
    arrivals: &ArrivalModel,
    slots: u64,
    seed: u64,
    initial: &[u64],
    thinning: u64,
    reps: usize,
) -> Result<Vec<Trace>, SimError> {
    arrivals.validate(g.node_count())?;
    if initial.len() != g.node_count() {
        return Err(SimError::BadInitialState { state: initial.len(), graph: g.node_count() });
    }
    let traces = crate::par::indexed_map(reps, |r| {
        let mut rng = replication_rng(seed, r as u64);
        run_with(initial, slots, thinning, move |w| step(w, g, arrivals, &mut rng))
            .expect("inputs validated above")
    });
    Ok(traces)
}

/// Piecewise-constant rescaling of a trace: `X(t) = W(⌈norm·t⌉) / norm`
/// with `norm = |W(0)|₁`, evaluated on the given time grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaledPath {
    pub norm: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl ScaledPath {
    pub fn l1_at(&self, idx: usize) -> f64 {
        self.states[idx].iter().sum()
    }
}

/// Samples the scaled path on `grid` (times in ascending order). The trace
/// must be unthinned and long enough to cover `⌈norm·max(grid)⌉` slots.
pub fn scaled_path(trace: &Trace, grid: &[f64]) -> Result<ScaledPath, SimError> {
    if trace.thinning != 1 {
        return Err(SimError::NeedFullTrace);
    }
    let norm: u64 = trace.initial.iter().sum();
    if norm == 0 {
        return Err(SimError::EmptyInitialState);
    }
    let available = trace.records.last().map_or(0, |r| r.slot);
    let normf = norm as f64;
    let mut times = Vec::with_capacity(grid.len());
    let mut states = Vec::with_capacity(grid.len());
    for &t in grid {
        let slot = (normf * t).ceil() as u64;
        if slot > available {
            return Err(SimError::TraceTooShort { required: slot, available });
        }
        let w = trace.state_after(slot).expect("bounds checked");
        times.push(t);
        states.push(w.iter().map(|&c| c as f64 / normf).collect());
    }
    Ok(ScaledPath { norm: normf, times, states })
}

/// Monte-Carlo estimate of the one-slot drift from `state`: per-coordinate
/// mean and standard error of `W(1) − W(0)` over `reps` replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftEstimate {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub reps: usize,
}

pub fn monte_carlo_drift(
    g: &Graph,
    arrivals: &ArrivalModel,
    state: &[u64],
    reps: usize,
    seed: u64,
) -> Result<DriftEstimate, SimError> {
    arrivals.validate(g.node_count())?;
    if state.len() != g.node_count() {
        return Err(SimError::BadInitialState { state: state.len(), graph: g.node_count() });
    }
    let w0 = WorkloadState::new(state.to_vec());
    let deltas: Vec<Vec<f64>> = crate::par::indexed_map(reps, |r| {
        let mut rng = replication_rng(seed, r as u64);
        let (w1, _) = step(&w0, g, arrivals, &mut rng);
        w1.counts
            .iter()
            .zip(state)
            .map(|(&new, &old)| new as f64 - old as f64)
            .collect()
    });
    let k = state.len();
    let mut mean = vec![0.0; k];
    for d in &deltas {
        for i in 0..k {
            mean[i] += d[i];
        }
    }
    for m in &mut mean {
        *m /= reps as f64;
    }
    let mut var = vec![0.0; k];
    for d in &deltas {
        for i in 0..k {
            let dev = d[i] - mean[i];
            var[i] += dev * dev;
        }
    }
    let std_err = var
        .iter()
        .map(|&v| (v / (reps.saturating_sub(1).max(1) as f64)).sqrt() / (reps as f64).sqrt())
        .collect();
    Ok(DriftEstimate { mean, std_err, reps })
}
