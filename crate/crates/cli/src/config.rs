//! Run configuration: a strict JSON file layered under command-line flags
//! (flags win), resolved and validated into one typed `RunConfig` per run.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spatial_aloha::graph::GraphSpec;
use spatial_aloha::sim::ArrivalModel;
use spatial_aloha::Graph;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Spectral,
    Classify,
    Simulate,
    Fluid,
    StablePoints,
    Sweep,
    Convergence,
    Boundary,
    Rates,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Spectral => "spectral",
            Mode::Classify => "classify",
            Mode::Simulate => "simulate",
            Mode::Fluid => "fluid",
            Mode::StablePoints => "stable-points",
            Mode::Sweep => "sweep",
            Mode::Convergence => "convergence",
            Mode::Boundary => "boundary",
            Mode::Rates => "rates",
        };
        write!(f, "{s}")
    }
}

/// The JSON config file schema. Every field is optional; unknown keys are
/// rejected. Command-line flags override any field set here.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub mode: Option<Mode>,
    pub graph: Option<String>,
    pub lambda: Option<String>,
    pub arrivals: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
    pub slots: Option<u64>,
    pub initial: Option<String>,
    pub thinning: Option<u64>,
    pub horizon: Option<f64>,
    pub step: Option<f64>,
    pub zero_tol: Option<f64>,
    pub scales: Option<String>,
    pub reps: Option<usize>,
    pub grid: Option<String>,
    pub checkpoints: Option<String>,
    pub multistart: Option<usize>,
    pub tol: Option<f64>,
    pub ansatz: Option<bool>,
    pub direction: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("config file {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("config file {}: {e}", path.display())))
    }

    /// Overlays `flags` (command-line values) on top of `self`.
    pub fn overlay(mut self, flags: FileConfig) -> Self {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if flags.$field.is_some() { self.$field = flags.$field; })*
            };
        }
        take!(
            mode, graph, lambda, arrivals, seed, out, format, slots, initial, thinning,
            horizon, step, zero_tol, scales, reps, grid, checkpoints, multistart, tol,
            ansatz, direction
        );
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalKind {
    Poisson,
    Bernoulli,
    Deterministic,
    Zero,
    BroadcastPoisson,
    BroadcastBernoulli,
}

impl ArrivalKind {
    fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "poisson" => Ok(ArrivalKind::Poisson),
            "bernoulli" => Ok(ArrivalKind::Bernoulli),
            "deterministic" => Ok(ArrivalKind::Deterministic),
            "zero" => Ok(ArrivalKind::Zero),
            "broadcast-poisson" => Ok(ArrivalKind::BroadcastPoisson),
            "broadcast-bernoulli" => Ok(ArrivalKind::BroadcastBernoulli),
            other => err(format!(
                "arrivals: unknown model '{other}' (poisson, bernoulli, deterministic, \
                 zero, broadcast-poisson, broadcast-bernoulli)"
            )),
        }
    }
}

/// Fully resolved and validated configuration for one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub graph_spec: GraphSpec,
    #[serde(skip)]
    pub graph: Graph,
    /// Per-node arrival rates (resolved against the graph size).
    pub lambda: Vec<f64>,
    pub arrivals: ArrivalKind,
    pub seed: u64,
    pub out: PathBuf,
    pub emit_csv: bool,
    pub slots: u64,
    pub initial: Option<Vec<f64>>,
    pub thinning: u64,
    pub horizon: Option<f64>,
    pub step: Option<f64>,
    pub zero_tol: Option<f64>,
    pub scales: Vec<u64>,
    pub reps: Option<usize>,
    pub grid: Vec<f64>,
    pub checkpoints: Vec<u64>,
    pub multistart: usize,
    pub tol: f64,
    pub ansatz: bool,
    pub direction: Option<Vec<f64>>,
}

fn parse_list<T: std::str::FromStr>(field: &str, s: &str) -> Result<Vec<T>, ConfigError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|_| ConfigError(format!("{field}: cannot parse '{v}'")))
        })
        .collect()
}

/// Scalar-or-vector rate syntax: a single value broadcasts to all nodes.
fn resolve_rates(field: &str, s: &str, nodes: usize) -> Result<Vec<f64>, ConfigError> {
    let values: Vec<f64> = parse_list(field, s)?;
    match values.len() {
        1 => Ok(vec![values[0]; nodes]),
        n if n == nodes => Ok(values),
        n => err(format!("{field}: expected 1 or {nodes} values, got {n}")),
    }
}

impl RunConfig {
    /// Validates and resolves a merged [`FileConfig`] for the given mode.
    pub fn resolve(mode: Mode, merged: FileConfig) -> Result<Self, ConfigError> {
        if let Some(file_mode) = merged.mode {
            if file_mode != mode {
                return err(format!(
                    "mode: config file says '{file_mode}' but the '{mode}' subcommand was invoked"
                ));
            }
        }
        let graph_text = match &merged.graph {
            Some(g) => g.clone(),
            None => return err("graph: missing (e.g. --graph cycle:4)"),
        };
        let graph_spec: GraphSpec = graph_text
            .parse()
            .map_err(|e| ConfigError(format!("graph: {e}")))?;
        let graph =
            spatial_aloha::build_graph(&graph_spec).map_err(|e| ConfigError(format!("graph: {e}")))?;
        let k = graph.node_count();

        let arrivals = match merged.arrivals.as_deref() {
            Some(s) => ArrivalKind::parse(s)?,
            None => ArrivalKind::Poisson,
        };

        let lambda = match merged.lambda.as_deref() {
            Some(s) => resolve_rates("lambda", s, k)?,
            None => {
                if arrivals == ArrivalKind::Zero {
                    vec![0.0; k]
                } else if mode == Mode::Spectral {
                    // Spectral output is rate-independent; echo zero.
                    vec![0.0; k]
                } else {
                    return err("lambda: missing (e.g. --lambda 0.1)");
                }
            }
        };
        if lambda.iter().any(|&l| !l.is_finite() || l < 0.0) {
            return err("lambda: rates must be finite and nonnegative");
        }
        match arrivals {
            ArrivalKind::Zero => {
                if lambda.iter().any(|&l| l != 0.0) {
                    return err(
                        "lambda/arrivals mismatch: the zero-arrival model requires lambda = 0",
                    );
                }
            }
            ArrivalKind::Deterministic => {
                if lambda.iter().any(|&l| l.fract() != 0.0) {
                    return err("lambda: deterministic arrivals need integer per-slot counts");
                }
            }
            _ => {
                // The fluid integrator legitimately runs with zero arrivals
                // (pure drain); every stochastic mode needs positive rates.
                let rate_free = matches!(mode, Mode::Spectral | Mode::Fluid);
                if !rate_free && lambda.iter().any(|&l| l <= 0.0) {
                    return err("lambda: lambda_i > 0 required");
                }
            }
        }

        let emit_csv = match merged.format.as_deref() {
            None | Some("json") => false,
            Some("csv") => true,
            Some(other) => return err(format!("format: '{other}' (expected json or csv)")),
        };

        let initial = match merged.initial.as_deref() {
            Some(s) => {
                let values: Vec<f64> = parse_list("initial", s)?;
                let values = match values.len() {
                    1 => vec![values[0]; k],
                    n if n == k => values,
                    n => return err(format!("initial: expected 1 or {k} values, got {n}")),
                };
                if values.iter().any(|&v| v < 0.0) {
                    return err("initial: entries must be nonnegative");
                }
                Some(values)
            }
            None => None,
        };

        let scales = match merged.scales.as_deref() {
            Some(s) => parse_list("scales", s)?,
            None => vec![100, 1_000, 10_000],
        };
        let grid = match merged.grid.as_deref() {
            Some(s) => parse_list("grid", s)?,
            None => Vec::new(),
        };
        let checkpoints = match merged.checkpoints.as_deref() {
            Some(s) => parse_list("checkpoints", s)?,
            None => vec![100, 1_000, 10_000],
        };
        let direction = match merged.direction.as_deref() {
            Some(s) => Some(resolve_rates("direction", s, k)?),
            None => None,
        };
        if mode == Mode::Sweep && grid.is_empty() {
            return err("grid: the sweep mode needs --grid <l1,l2,...>");
        }

        let config = RunConfig {
            mode,
            graph_spec,
            graph,
            lambda,
            arrivals,
            seed: merged.seed.unwrap_or(0),
            out: merged.out.unwrap_or_else(|| PathBuf::from("out")),
            emit_csv,
            slots: merged.slots.unwrap_or(100_000),
            initial,
            thinning: merged.thinning.unwrap_or(1),
            horizon: merged.horizon,
            step: merged.step,
            zero_tol: merged.zero_tol,
            scales,
            reps: merged.reps,
            grid,
            checkpoints,
            multistart: merged.multistart.unwrap_or(64),
            tol: merged.tol.unwrap_or(1e-10),
            ansatz: merged.ansatz.unwrap_or(true),
            direction,
        };
        if mode == Mode::Rates {
            let model = config.arrival_model()?;
            if model.all_zero_probability() <= 0.0 {
                return err(
                    "arrivals: the mixing probe needs a model with positive probability \
                     of an all-zero slot (poisson or bernoulli)",
                );
            }
        }
        Ok(config)
    }

    /// The arrival model implied by `arrivals` and `lambda`.
    pub fn arrival_model(&self) -> Result<ArrivalModel, ConfigError> {
        let k = self.graph.node_count();
        let model = match self.arrivals {
            ArrivalKind::Poisson => ArrivalModel::Poisson { rates: self.lambda.clone() },
            ArrivalKind::Bernoulli => ArrivalModel::Bernoulli { rates: self.lambda.clone() },
            ArrivalKind::Deterministic => ArrivalModel::Deterministic {
                counts: self.lambda.iter().map(|&l| l as u64).collect(),
            },
            ArrivalKind::Zero => ArrivalModel::Zero { nodes: k },
            ArrivalKind::BroadcastPoisson => {
                ArrivalModel::BroadcastPoisson { rate: self.lambda[0], nodes: k }
            }
            ArrivalKind::BroadcastBernoulli => {
                ArrivalModel::BroadcastBernoulli { rate: self.lambda[0], nodes: k }
            }
        };
        model
            .validate(k)
            .map_err(|e| ConfigError(format!("arrivals: {e}")))?;
        Ok(model)
    }

    /// Integer workload implied by `initial` (defaults to empty queues).
    pub fn initial_counts(&self) -> Result<Vec<u64>, ConfigError> {
        match &self.initial {
            None => Ok(vec![0; self.graph.node_count()]),
            Some(values) => values
                .iter()
                .map(|&v| {
                    if v.fract() != 0.0 {
                        err(format!("initial: workload counts must be integers, got {v}"))
                    } else {
                        Ok(v as u64)
                    }
                })
                .collect(),
        }
    }
}
