//! Batch command-line interface for the spatial random-access toolkit.
//!
//! Every subcommand accepts `--config <file.json>` (strict schema, unknown
//! keys rejected) with command-line flags overriding file fields. Exit
//! codes: 0 success, 1 runtime failure, 2 configuration error.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{FileConfig, Mode, RunConfig};

#[derive(Parser)]
#[command(
    name = "spatial-aloha",
    version,
    about = "Slotted random-access protocol on interference graphs: exact simulation, \
             fluid model, spectral thresholds, stability analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every mode.
#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// JSON config file; flags given here override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Graph: cycle:K | complete:K | torus:MxN | rr:K,d[,seed] | file:PATH
    #[arg(long)]
    graph: Option<String>,
    /// Arrival rate(s): one value or K comma-separated values
    #[arg(long)]
    lambda: Option<String>,
    /// Random seed (default 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default ./out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// json (default) or csv (also write CSV tables)
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args, Debug, Default)]
struct SimArgs {
    /// Arrival model: poisson | bernoulli | deterministic | zero |
    /// broadcast-poisson | broadcast-bernoulli
    #[arg(long)]
    arrivals: Option<String>,
    /// Number of slots to simulate
    #[arg(long)]
    slots: Option<u64>,
    /// Initial workload: one value or K comma-separated values
    #[arg(long)]
    initial: Option<String>,
    /// Record every n-th slot (default 1)
    #[arg(long)]
    thinning: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct FluidArgs {
    /// Initial fluid state: one value or K comma-separated values
    #[arg(long)]
    initial: Option<String>,
    /// Integration horizon
    #[arg(long)]
    horizon: Option<f64>,
    /// Integrator base step (default 1e-3/K)
    #[arg(long)]
    step: Option<f64>,
    /// Drain detection level on |z| (default 1e-6)
    #[arg(long)]
    zero_tol: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct StablePointArgs {
    /// Random Newton starts on top of the diagonal and ansatz seeds
    #[arg(long)]
    multistart: Option<usize>,
    /// Residual tolerance (default 1e-10)
    #[arg(long)]
    tol: Option<f64>,
    /// Solve the symmetric pair reduction on 4-cycles (default true)
    #[arg(long)]
    ansatz: Option<bool>,
}

#[derive(Args, Debug, Default)]
struct SweepArgs {
    /// Lambda grid, comma-separated ascending
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Initial workload per replication
    #[arg(long)]
    initial: Option<String>,
}

#[derive(Args, Debug, Default)]
struct ConvergenceArgs {
    /// Initial masses, comma-separated ascending (default 100,1000,10000)
    #[arg(long)]
    scales: Option<String>,
    /// Start direction: one value or K comma-separated values
    #[arg(long)]
    direction: Option<String>,
    /// Time horizon of the comparison (default 1.0)
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct BoundaryArgs {
    /// Single start profile (default: every extreme point)
    #[arg(long)]
    initial: Option<String>,
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct RatesArgs {
    /// Arrival model (must allow empty slots)
    #[arg(long)]
    arrivals: Option<String>,
    /// Checkpoints, comma-separated ascending (default 100,1000,10000)
    #[arg(long)]
    checkpoints: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    /// Initial workload of the replicated chains
    #[arg(long)]
    initial: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues, spectral gap, and stability thresholds of the graph
    Spectral {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Threshold verdict (and a witness search when asymmetric/irregular)
    Classify {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Exact slot-by-slot simulation of the workload chain
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Integrate the fluid model from an initial state
    Fluid {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        fluid: FluidArgs,
    },
    /// Fixed points of the normalized dynamics with local classification
    #[command(name = "stable-points")]
    StablePoints {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sp: StablePointArgs,
    },
    /// Empirical stability indicators across a rate grid
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Scaled simulation paths against the fluid trajectory across scales
    Convergence {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        conv: ConvergenceArgs,
    },
    /// Boundary repulsion of fluid trajectories from extreme starts
    Boundary {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        boundary: BoundaryArgs,
    },
    /// Total-variation mixing probe against a long-run reference
    Rates {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        rates: RatesArgs,
    },
}

fn flags_from(common: CommonArgs) -> FileConfig {
    FileConfig {
        graph: common.graph,
        lambda: common.lambda,
        seed: common.seed,
        out: common.out,
        format: common.format,
        ..FileConfig::default()
    }
}

fn build_config(command: Command) -> Result<RunConfig, config::ConfigError> {
    let (mode, common, extra) = match command {
        Command::Spectral { common } => (Mode::Spectral, common, FileConfig::default()),
        Command::Classify { common } => (Mode::Classify, common, FileConfig::default()),
        Command::Simulate { common, sim } => (
            Mode::Simulate,
            common,
            FileConfig {
                arrivals: sim.arrivals,
                slots: sim.slots,
                initial: sim.initial,
                thinning: sim.thinning,
                ..FileConfig::default()
            },
        ),
        Command::Fluid { common, fluid } => (
            Mode::Fluid,
            common,
            FileConfig {
                initial: fluid.initial,
                horizon: fluid.horizon,
                step: fluid.step,
                zero_tol: fluid.zero_tol,
                ..FileConfig::default()
            },
        ),
        Command::StablePoints { common, sp } => (
            Mode::StablePoints,
            common,
            FileConfig {
                multistart: sp.multistart,
                tol: sp.tol,
                ansatz: sp.ansatz,
                ..FileConfig::default()
            },
        ),
        Command::Sweep { common, sweep } => (
            Mode::Sweep,
            common,
            FileConfig {
                grid: sweep.grid,
                slots: sweep.slots,
                reps: sweep.reps,
                initial: sweep.initial,
                ..FileConfig::default()
            },
        ),
        Command::Convergence { common, conv } => (
            Mode::Convergence,
            common,
            FileConfig {
                scales: conv.scales,
                direction: conv.direction,
                horizon: conv.horizon,
                reps: conv.reps,
                ..FileConfig::default()
            },
        ),
        Command::Boundary { common, boundary } => (
            Mode::Boundary,
            common,
            FileConfig {
                initial: boundary.initial,
                horizon: boundary.horizon,
                ..FileConfig::default()
            },
        ),
        Command::Rates { common, rates } => (
            Mode::Rates,
            common,
            FileConfig {
                arrivals: rates.arrivals,
                checkpoints: rates.checkpoints,
                reps: rates.reps,
                initial: rates.initial,
                ..FileConfig::default()
            },
        ),
    };
    let file = match &common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let merged = file.overlay(extra).overlay(flags_from(common));
    RunConfig::resolve(mode, merged)
}

fn main() {
    let cli = Cli::parse();
    let cfg = match build_config(cli.command) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            std::process::exit(2);
        }
    };
    if let Err(e) = commands::run(&cfg) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
