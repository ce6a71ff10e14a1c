//! Simulator and numerical-analysis toolkit for a slotted random-access
//! protocol with graph-local interference.
//!
//! Stations sit on the vertices of a finite connected graph. Each slot,
//! every queued user at node `i` transmits with probability
//! `1 / Σ_{j∈V_i} W_j` (one over the workload of the closed neighborhood)
//! and succeeds iff it is the only transmitter in `V_i`. The crate provides:
//!
//! - [`graph`]: interaction-graph construction and validation (cycles,
//!   complete graphs, tori, random regular graphs, edge-list files).
//! - [`spectral`]: the closed-neighborhood matrix, its spectrum, and the
//!   stability thresholds `e⁻¹/V` and `e⁻¹/V·(1−γ²/V²)` it determines.
//! - [`sim`]: exact slot-by-slot simulation of the workload Markov chain,
//!   with reproducible per-replication random streams.
//! - [`fluid`]: the deterministic fluid model `z' = λ − G̃(z)`, a
//!   fourth-order integrator with drain detection, and the Euclidean-norm
//!   Lyapunov channel.
//! - [`stability`]: threshold classification, the projected dynamics on the
//!   probability simplex, analytic and numeric Jacobians at the uniform
//!   point, fixed-point search with local classification, and a witness
//!   search for the asymmetric stability criterion.
//! - [`experiments`]: cross-validation harnesses tying simulation to the
//!   fluid model (scaled-path convergence, rate sweeps, boundary repulsion,
//!   drain/growth rates, a total-variation mixing probe).
//!
//! Replicated computations run on a thread pool when the default
//! `parallel` feature is enabled; disabling it yields a fully sequential
//! build with bit-identical results.

pub mod experiments;
pub mod fluid;
pub mod graph;
pub mod numerics;
pub(crate) mod par;
pub mod sim;
pub mod spectral;
pub mod stability;

pub use graph::{build_graph, Graph, GraphMixture, GraphSpec};
