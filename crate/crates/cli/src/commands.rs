//! Mode dispatch: each mode runs its module, writes machine artifacts under
//! the output directory, and prints a one-screen summary. Artifacts are
//! byte-identical for identical (config, seed); wall-clock metadata goes to
//! a separate `run_meta.json` sidecar.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use spatial_aloha::experiments::{
    boundary_repulsion_check, convergence_rate_probe, fluid_limit_convergence, lambda_sweep,
    BoundaryConfig, ConvergenceConfig, RateProbeConfig, SweepConfig,
};
use spatial_aloha::fluid::{integrate, FluidParams};
use spatial_aloha::sim::simulate;
use spatial_aloha::spectral::spectral_report;
use spatial_aloha::stability::{classify, find_stable_points, stolyar_search, SearchConfig, StolyarConfig};

use crate::config::{Mode, RunConfig};

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn write_run_meta(cfg: &RunConfig) -> Result<()> {
    #[derive(Serialize)]
    struct RunMeta {
        started_unix_ms: u128,
        argv: Vec<String>,
    }
    let meta = RunMeta {
        started_unix_ms: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
        argv: std::env::args().collect(),
    };
    write_json(&cfg.out, "run_meta.json", &meta)
}

/// Runs the configured mode; artifacts land under `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    write_json(&cfg.out, "effective_config.json", cfg)?;
    write_run_meta(cfg)?;
    match cfg.mode {
        Mode::Spectral => run_spectral(cfg),
        Mode::Classify => run_classify(cfg),
        Mode::Simulate => run_simulate(cfg),
        Mode::Fluid => run_fluid(cfg),
        Mode::StablePoints => run_stable_points(cfg),
        Mode::Sweep => run_sweep(cfg),
        Mode::Convergence => run_convergence(cfg),
        Mode::Boundary => run_boundary(cfg),
        Mode::Rates => run_rates(cfg),
    }
}

fn run_spectral(cfg: &RunConfig) -> Result<()> {
    let report = spectral_report(&cfg.graph, cfg.lambda[0]);
    write_json(&cfg.out, "spectral.json", &report)?;
    println!("graph {} on {} nodes", cfg.graph_spec, cfg.graph.node_count());
    println!(
        "eigenvalues: {}",
        report
            .eigenvalues
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!("spectral gap: {:.6}", report.spectral_gap);
    match (report.global_threshold, report.local_threshold) {
        (Some(g), Some(l)) => {
            println!("global threshold e^-1/V : {g:.6}");
            println!("local threshold         : {l:.6}");
        }
        _ => println!(
            "thresholds: {}",
            report.threshold_note.as_deref().unwrap_or("n/a")
        ),
    }
    Ok(())
}

fn run_classify(cfg: &RunConfig) -> Result<()> {
    let verdict = classify(&cfg.graph, &cfg.lambda);
    // A witness search complements the threshold verdict in the asymmetric
    // or irregular case.
    let witness = if !verdict.regular || !verdict.symmetric_rates {
        let search = stolyar_search(
            &cfg.graph,
            &cfg.lambda,
            &StolyarConfig { seed: cfg.seed, ..StolyarConfig::default() },
        );
        Some(search)
    } else {
        None
    };
    #[derive(Serialize)]
    struct ClassifyArtifact<'a> {
        verdict: &'a spatial_aloha::stability::StabilityVerdict,
        witness_search: &'a Option<spatial_aloha::stability::StolyarSearch>,
    }
    write_json(&cfg.out, "classify.json", &ClassifyArtifact { verdict: &verdict, witness_search: &witness })?;
    println!("graph {} on {} nodes", cfg.graph_spec, cfg.graph.node_count());
    println!("lambda: {:?}", cfg.lambda);
    println!("global threshold e^-1/V : {:.6}", verdict.global_threshold);
    if let Some(local) = verdict.local_threshold {
        println!("local threshold         : {local:.6}");
    }
    println!("fluid_stable: {}", verdict.fluid_stable);
    println!("diagonal locally stable: {:?}", verdict.diagonal_locally_stable);
    for note in &verdict.notes {
        println!("note: {note}");
    }
    if let Some(search) = &witness {
        match &search.witness {
            Some(w) => println!("stability witness found: margin {:.6}", w.margin),
            None => println!(
                "stability witness: not found within budget (best margin {:.6})",
                search.best_margin
            ),
        }
    }
    Ok(())
}

fn run_simulate(cfg: &RunConfig) -> Result<()> {
    let arrivals = cfg.arrival_model().map_err(|e| anyhow::anyhow!("{e}"))?;
    let initial = cfg.initial_counts().map_err(|e| anyhow::anyhow!("{e}"))?;
    let trace = simulate(&cfg.graph, &arrivals, cfg.slots, cfg.seed, &initial, cfg.thinning)?;
    let path = cfg.out.join("trace.jsonl");
    trace.write_jsonl(BufWriter::new(File::create(&path)?))?;
    write_json(&cfg.out, "summary.json", &trace.summary)?;
    trace.write_summary_csv(BufWriter::new(File::create(cfg.out.join("summary.csv"))?))?;
    println!(
        "simulated {} slots on {} (seed {}), recorded {} slots",
        trace.summary.slots,
        cfg.graph_spec,
        cfg.seed,
        trace.records.len()
    );
    println!(
        "time-average total workload: {:.4}",
        trace.summary.time_avg_total_workload
    );
    println!(
        "per-node throughput: {}",
        trace
            .summary
            .per_node_throughput
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!("zero-state visits: {}", trace.summary.zero_state_visits);
    if let Some(slot) = trace.aborted_at {
        bail!("run aborted at slot {slot}: workload counts saturated (partial trace written)");
    }
    Ok(())
}

fn run_fluid(cfg: &RunConfig) -> Result<()> {
    let k = cfg.graph.node_count();
    let z0 = cfg.initial.clone().unwrap_or_else(|| vec![1.0; k]);
    let mut params =
        FluidParams::new(cfg.graph.clone(), cfg.lambda.clone(), cfg.horizon.unwrap_or(50.0));
    if let Some(step) = cfg.step {
        params = params.with_step(step);
    }
    if let Some(tol) = cfg.zero_tol {
        params = params.with_zero_tol(tol);
    }
    let traj = integrate(&z0, &params)?;
    traj.write_csv(BufWriter::new(File::create(cfg.out.join("trajectory.csv"))?))?;
    traj.write_jsonl(BufWriter::new(File::create(cfg.out.join("trajectory.jsonl"))?))?;
    #[derive(Serialize)]
    struct FluidArtifact {
        termination: spatial_aloha::fluid::Termination,
        boundary_contact: Option<f64>,
        whole_neighborhood_zero: bool,
        step_used: f64,
        step_halvings: u32,
        samples: usize,
    }
    write_json(
        &cfg.out,
        "fluid.json",
        &FluidArtifact {
            termination: traj.termination,
            boundary_contact: traj.boundary_contact,
            whole_neighborhood_zero: traj.whole_neighborhood_zero,
            step_used: traj.step_used,
            step_halvings: traj.step_halvings,
            samples: traj.samples.len(),
        },
    )?;
    match traj.termination {
        spatial_aloha::fluid::Termination::Drained { time } => {
            println!("trajectory drained at t = {time:.6}")
        }
        spatial_aloha::fluid::Termination::Horizon => {
            let last = traj.samples.last().unwrap();
            println!(
                "horizon reached at t = {:.3}, |z| = {:.6}",
                last.t,
                last.z.iter().sum::<f64>()
            );
        }
    }
    if traj.whole_neighborhood_zero {
        println!(
            "note: a state with an entirely empty neighborhood was evaluated; \
             its derivative uses the continuous extension lambda_i"
        );
    }
    Ok(())
}

fn run_stable_points(cfg: &RunConfig) -> Result<()> {
    let lambda = cfg.lambda[0];
    if cfg.lambda.iter().any(|&l| l != lambda) {
        bail!("stable-points needs a symmetric rate");
    }
    let search_cfg = SearchConfig {
        multistart: cfg.multistart,
        seed: cfg.seed,
        tol: cfg.tol,
        symmetric_ansatz: cfg.ansatz,
        ..SearchConfig::default()
    };
    let search = find_stable_points(&cfg.graph, lambda, &search_cfg)?;
    write_json(&cfg.out, "stable_points.json", &search)?;
    if cfg.emit_csv {
        let mut w = BufWriter::new(File::create(cfg.out.join("stable_points.csv"))?);
        writeln!(w, "residual,classification,y")?;
        for p in &search.points {
            writeln!(
                w,
                "{},{:?},{}",
                p.residual,
                p.classification,
                p.y.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("|")
            )?;
        }
    }
    println!(
        "{} fixed point(s) found ({} start(s) dropped):",
        search.points.len(),
        search.dropped_starts
    );
    for p in &search.points {
        println!(
            "  y = [{}]  residual {:.2e}  {:?}  re(eig) = [{}]",
            p.y.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "),
            p.residual,
            p.classification,
            p.tangent_eigenvalues
                .iter()
                .map(|e| format!("{:.4}", e.re))
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    Ok(())
}

fn run_sweep(cfg: &RunConfig) -> Result<()> {
    let initial = if cfg.initial.is_some() {
        Some(cfg.initial_counts().map_err(|e| anyhow::anyhow!("{e}"))?)
    } else {
        None
    };
    let sweep_cfg = SweepConfig {
        slots: cfg.slots,
        reps: cfg.reps.unwrap_or(4),
        seed: cfg.seed,
        initial,
    };
    let result = lambda_sweep(&cfg.graph, &cfg.grid, &sweep_cfg)?;
    write_json(&cfg.out, "sweep.json", &result)?;
    if cfg.emit_csv {
        result.write_csv(BufWriter::new(File::create(cfg.out.join("sweep.csv"))?))?;
    }
    println!(
        "thresholds: e^-1/V = {:.6}, local = {:.6}",
        result.global_threshold, result.local_threshold
    );
    for e in &result.entries {
        println!(
            "lambda {:.4} [{}]: avg |W| = {:.2}, slope = {:+.5}, returned = {:.0}%",
            e.lambda,
            e.label,
            e.time_avg_total_workload,
            e.terminal_slope,
            100.0 * e.return_fraction
        );
    }
    Ok(())
}

fn run_convergence(cfg: &RunConfig) -> Result<()> {
    let k = cfg.graph.node_count();
    let lambda = cfg.lambda[0];
    if cfg.lambda.iter().any(|&l| l != lambda) {
        bail!("convergence needs a symmetric rate");
    }
    let direction = cfg
        .direction
        .clone()
        .unwrap_or_else(|| vec![1.0 / k as f64; k]);
    let conv_cfg = ConvergenceConfig {
        scales: cfg.scales.clone(),
        direction,
        horizon: cfg.horizon.unwrap_or(1.0),
        grid_points: 101,
        reps: cfg.reps.unwrap_or(24),
        seed: cfg.seed,
        arrivals: None,
    };
    let record = fluid_limit_convergence(&cfg.graph, lambda, &conv_cfg)?;
    write_json(&cfg.out, "convergence.json", &record)?;
    if cfg.emit_csv {
        record.write_csv(BufWriter::new(File::create(cfg.out.join("convergence.csv"))?))?;
    }
    for s in &record.per_scale {
        println!(
            "scale {:>8}: median sup-gap {:.5} over {} reps ({} flagged)",
            s.scale,
            s.median_gap,
            s.gaps.len(),
            s.flagged_reps
        );
    }
    println!(
        "medians strictly decreasing: {}",
        record.medians_strictly_decreasing()
    );
    Ok(())
}

fn run_boundary(cfg: &RunConfig) -> Result<()> {
    let mut bcfg = BoundaryConfig::default();
    if let Some(h) = cfg.horizon {
        bcfg.horizon = h;
    }
    if let Some(start) = &cfg.initial {
        bcfg.starts = Some(vec![start.clone()]);
    }
    let report = boundary_repulsion_check(&cfg.graph, &cfg.lambda, &bcfg)?;
    write_json(&cfg.out, "boundary.json", &report)?;
    if cfg.emit_csv {
        report.write_csv(BufWriter::new(File::create(cfg.out.join("boundary.csv"))?))?;
    }
    println!(
        "lambda_* = {:.4}, K1 = {:.3}, K2 = {:.3}, derivative violations: {}",
        report.lambda_star, report.k1, report.k2, report.derivative_violations
    );
    for s in &report.per_start {
        let min_ratio = s
            .envelope
            .iter()
            .map(|e| e.ratio)
            .fold(f64::INFINITY, f64::min);
        println!(
            "start [{}]: interior positive = {}, min envelope ratio = {:.4}",
            s.start
                .iter()
                .map(|v| format!("{v:.3}"))
                .collect::<Vec<_>>()
                .join(", "),
            s.interior_positive,
            min_ratio
        );
    }
    Ok(())
}

fn run_rates(cfg: &RunConfig) -> Result<()> {
    let lambda = cfg.lambda[0];
    if cfg.lambda.iter().any(|&l| l != lambda) {
        bail!("rates needs a symmetric rate");
    }
    let arrivals = cfg.arrival_model().map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut probe_cfg = RateProbeConfig {
        seed: cfg.seed,
        arrivals: Some(arrivals),
        ..RateProbeConfig::default()
    };
    if let Some(reps) = cfg.reps {
        probe_cfg.reps = reps;
    }
    if cfg.initial.is_some() {
        probe_cfg.initial = Some(cfg.initial_counts().map_err(|e| anyhow::anyhow!("{e}"))?);
    }
    let report = convergence_rate_probe(&cfg.graph, lambda, &cfg.checkpoints, &probe_cfg)?;
    write_json(&cfg.out, "rates.json", &report)?;
    if cfg.emit_csv {
        report.write_csv(BufWriter::new(File::create(cfg.out.join("rates.csv"))?))?;
    }
    for i in 0..report.checkpoints.len() {
        println!(
            "checkpoint {:>8}: TV = {:.4} +/- {:.4}",
            report.checkpoints[i], report.tv[i], report.band[i]
        );
    }
    println!(
        "non-increasing within bands: {} (truncation radius {}, tail mass {:.4})",
        report.non_increasing_within_bands, report.truncation_radius, report.tail_mass
    );
    for warn in &report.warnings {
        println!("warning: {warn}");
    }
    Ok(())
}

