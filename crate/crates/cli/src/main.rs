//! `dcgrad`: stability analysis of DC microgrids from the command line.
//!
//! Reports go to stdout as JSON; human-readable tables go to stderr.
//! Exit codes: 0 success, 2 invalid input, 3 solver non-convergence,
//! 4 certification failure, 5 simulation divergence (with
//! `--fail-on-divergence`).

mod report;
mod scenario;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dcgrad_core::equilibrium::StartBox;
use dcgrad_core::grid::GridFile;
use dcgrad_core::potential::convexity_certificate;
use dcgrad_core::sim::{lyapunov_monitor, EventKind, Trajectory};
use dcgrad_core::{
    estimate_roa, par, simulate, solve_equilibrium, uniqueness_probe, DroopVariant, EquilibriumResult, Error,
    GridModel, IntegratorConfig, Method, RoaConfig, RoaEstimate, SolverConfig,
};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use report::{ErrorInfo, InputDigest, RunReport, Table};
use scenario::ScenarioFile;

#[derive(Parser)]
#[command(name = "dcgrad", version, about = "Equilibrium, region of attraction and transient simulation of DC microgrids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a grid file: schema, connectivity, positive-definite conductance.
    Validate { grid: PathBuf },
    /// Solve for the equilibrium by minimising the potential.
    Equilibrium {
        grid: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Multi-start uniqueness probe.
    Probe {
        grid: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        probe: ProbeArgs,
    },
    /// Convexity certificate at a point (the equilibrium by default).
    Convexity {
        grid: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        convexity: ConvexityArgs,
    },
    /// Largest certified box around the equilibrium and per-terminal v_min.
    Roa {
        grid: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        roa: RoaArgs,
    },
    /// Run a scenario file and write trajectories as CSV plus event logs.
    Simulate {
        grid: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        roa: RoaArgs,
    },
}

#[derive(Args, Serialize, Clone)]
struct SolverArgs {
    /// Stopping tolerance on the gradient infinity norm.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Newton)]
    method: MethodArg,
}

#[derive(Copy, Clone, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MethodArg {
    Newton,
    GradientDescent,
}

#[derive(Args, Serialize, Clone)]
struct RoaArgs {
    /// Required strong-convexity margin.
    #[arg(long, default_value_t = 1e-6)]
    mu: f64,
    #[arg(long, default_value_t = 1e6)]
    alpha_cap: f64,
}

#[derive(Args, Serialize, Clone)]
struct ProbeArgs {
    #[arg(long, default_value_t = 50)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    lower: f64,
    #[arg(long, default_value_t = 1.5)]
    upper: f64,
}

#[derive(Args, Serialize, Clone)]
struct ConvexityArgs {
    #[arg(long, default_value_t = 1e-6)]
    mu: f64,
    /// Comma-separated voltages, one per terminal.
    #[arg(long, value_delimiter = ',')]
    at: Option<Vec<f64>>,
}

#[derive(Args, Serialize, Clone)]
struct SimArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum, default_value_t = VariantArg::Gradient)]
    variant: VariantArg,
    /// Enable under-voltage protection with thresholds from the region estimate.
    #[arg(long)]
    protect: bool,
    #[arg(long, default_value_t = 1e-6)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-9)]
    atol: f64,
    /// Directory for trajectory CSV and event files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Exit with code 5 if a run that should stay bounded diverges.
    #[arg(long)]
    fail_on_divergence: bool,
}

#[derive(Copy, Clone, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum VariantArg {
    Gradient,
    Linear,
}

impl From<VariantArg> for DroopVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Gradient => DroopVariant::GradientConsistent,
            VariantArg::Linear => DroopVariant::LinearDroop,
        }
    }
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            tol_grad_inf: self.tol,
            max_iter: self.max_iter,
            method: match self.method {
                MethodArg::Newton => Method::Newton,
                MethodArg::GradientDescent => Method::GradientDescent,
            },
            ..SolverConfig::default()
        }
    }
}

impl RoaArgs {
    fn config(&self) -> RoaConfig {
        RoaConfig { mu: self.mu, alpha_cap: self.alpha_cap, ..RoaConfig::default() }
    }
}

/// Raised when a run diverges and `--fail-on-divergence` is set.
#[derive(Debug)]
struct Diverged(Vec<String>);

impl std::fmt::Display for Diverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "simulation diverged: {}", self.0.join(", "))
    }
}

impl std::error::Error for Diverged {}

struct Outcome {
    result: Value,
    failure: Option<anyhow::Error>,
}

impl From<Value> for Outcome {
    fn from(result: Value) -> Self {
        Self { result, failure: None }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DCGRAD_LOG", "warn")).init();
    let cli = Cli::parse();
    let started = Instant::now();
    let mut inputs = Vec::new();
    let (name, config, outcome) = match &cli.command {
        Command::Validate { grid } => ("validate", json!({}), cmd_validate(grid, &mut inputs)),
        Command::Equilibrium { grid, solver } => {
            ("equilibrium", json!({ "solver": solver }), cmd_equilibrium(grid, solver, &mut inputs))
        }
        Command::Probe { grid, solver, probe } => {
            ("probe", json!({ "solver": solver, "probe": probe }), cmd_probe(grid, solver, probe, &mut inputs))
        }
        Command::Convexity { grid, solver, convexity } => (
            "convexity",
            json!({ "solver": solver, "convexity": convexity }),
            cmd_convexity(grid, solver, convexity, &mut inputs),
        ),
        Command::Roa { grid, solver, roa } => {
            ("roa", json!({ "solver": solver, "roa": roa }), cmd_roa(grid, solver, roa, &mut inputs))
        }
        Command::Simulate { grid, sim, solver, roa } => (
            "simulate",
            json!({ "simulation": sim, "solver": solver, "roa": roa }),
            cmd_simulate(grid, sim, solver, roa, &mut inputs),
        ),
    };

    let (result, failure) = match outcome {
        Ok(o) => (Some(o.result), o.failure),
        Err(e) => (None, Some(e)),
    };
    let error = failure.map(|e| classify(&e));
    if let Some(err) = &error {
        eprintln!("error: {}", err.message);
    }
    let code = error.as_ref().map_or(0, |e| e.exit_code);
    let report = RunReport {
        tool: "dcgrad",
        version: env!("CARGO_PKG_VERSION"),
        command: name,
        inputs,
        config,
        status: if error.is_some() { "error" } else { "ok" },
        result,
        error,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    if let Err(e) = report.emit() {
        eprintln!("error: cannot write report: {e}");
        return ExitCode::from(1);
    }
    ExitCode::from(code as u8)
}

fn classify(err: &anyhow::Error) -> ErrorInfo {
    let message = format!("{err:#}");
    if let Some(d) = err.downcast_ref::<Diverged>() {
        return ErrorInfo { kind: "diverged", exit_code: 5, message, detail: Some(json!(d.0)) };
    }
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::NonConvergence { trace, .. }) | Some(Error::NoDescent { trace, .. }) => ErrorInfo {
            kind: "non-convergence",
            exit_code: 3,
            message,
            detail: Some(json!({ "trace": trace })),
        },
        Some(Error::NotCertified { mu, lambda_min }) => ErrorInfo {
            kind: "not-certified",
            exit_code: 4,
            message,
            detail: Some(json!({ "mu": mu, "lambda_min": lambda_min })),
        },
        _ => ErrorInfo { kind: "invalid-input", exit_code: 2, message, detail: None },
    }
}

struct Loaded {
    file: GridFile,
    model: GridModel,
}

fn load(grid: &Path, inputs: &mut Vec<InputDigest>) -> Result<Loaded> {
    inputs.push(InputDigest::of("grid", grid)?);
    let file = GridFile::load(grid).with_context(|| format!("loading {}", grid.display()))?;
    let model = file.to_model().with_context(|| format!("validating {}", grid.display()))?;
    Ok(Loaded { file, model })
}

fn node_ids(model: &GridModel) -> Vec<usize> {
    model.terminals().iter().map(|t| t.node).collect()
}

fn cmd_validate(grid: &Path, inputs: &mut Vec<InputDigest>) -> Result<Outcome> {
    let Loaded { file, model } = load(grid, inputs)?;
    let mut nodes: Vec<usize> = file.lines.iter().flat_map(|l| [l.from, l.to]).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let eliminated: Vec<usize> =
        nodes.iter().copied().filter(|&n| n != file.master.id && model.terminal_index(n).is_none()).collect();
    let lambda_min = dcgrad_core::linalg::lambda_min(model.g());
    eprintln!(
        "OK: {} terminals, {} lines, {} passive nodes eliminated, lambda_min(G) = {lambda_min:.6e}",
        model.n(),
        file.lines.len(),
        eliminated.len()
    );
    Ok(json!({
        "terminals": node_ids(&model),
        "lines": file.lines.len(),
        "eliminated_nodes": eliminated,
        "lambda_min_g": lambda_min,
        "island": model.island(),
        "v0_pu": model.v0(),
    })
    .into())
}

fn equilibrium(model: &GridModel, solver: &SolverArgs) -> Result<EquilibriumResult> {
    Ok(solve_equilibrium(model, &solver.config())?)
}

fn cmd_equilibrium(grid: &Path, solver: &SolverArgs, inputs: &mut Vec<InputDigest>) -> Result<Outcome> {
    let Loaded { file, model } = load(grid, inputs)?;
    let eq = equilibrium(&model, solver)?;
    let mut table = Table::new(&["node", "p [pu]", "v_eq [pu]", "v_eq [V]"]);
    for (i, t) in model.terminals().iter().enumerate() {
        table.row(vec![
            t.node.to_string(),
            format!("{:.4}", t.p),
            format!("{:.6}", eq.v_eq[i]),
            format!("{:.3}", eq.v_eq[i] * file.base.v_volts),
        ]);
    }
    table.print();
    eprintln!("residual {:.3e} after {} iterations", eq.residual_inf, eq.iterations);
    Ok(json!({ "nodes": node_ids(&model), "equilibrium": eq }).into())
}

fn cmd_probe(grid: &Path, solver: &SolverArgs, probe: &ProbeArgs, inputs: &mut Vec<InputDigest>) -> Result<Outcome> {
    let Loaded { model, .. } = load(grid, inputs)?;
    if !(probe.lower > 0.0 && probe.upper >= probe.lower) {
        bail!("probe box must satisfy 0 < lower <= upper");
    }
    let region = StartBox::cube(model.n(), probe.lower, probe.upper);
    let result = uniqueness_probe(&model, &solver.config(), probe.starts, &region, probe.seed)?;
    eprintln!(
        "{} starts, spread {:.3e}: {}",
        result.starts,
        result.spread,
        if result.all_converged_to_same { "unique" } else { "DIFFERENT POINTS" }
    );
    Ok(json!({ "nodes": node_ids(&model), "probe": result }).into())
}

fn cmd_convexity(
    grid: &Path,
    solver: &SolverArgs,
    args: &ConvexityArgs,
    inputs: &mut Vec<InputDigest>,
) -> Result<Outcome> {
    let Loaded { model, .. } = load(grid, inputs)?;
    let v = match &args.at {
        Some(v) => DVector::from_column_slice(v),
        None => equilibrium(&model, solver)?.v(),
    };
    let cert = convexity_certificate(&model, &v, args.mu)?;
    eprintln!("lambda_min = {:.6e}, mu = {:e}: {}", cert.lambda_min, args.mu, if cert.certified { "certified" } else { "NOT certified" });
    let result = json!({ "nodes": node_ids(&model), "v": v.as_slice(), "certificate": cert });
    let failure = (!cert.certified)
        .then(|| anyhow::Error::new(Error::NotCertified { mu: args.mu, lambda_min: cert.lambda_min }));
    Ok(Outcome { result, failure })
}

fn region(model: &GridModel, eq: &EquilibriumResult, roa: &RoaArgs) -> Result<RoaEstimate> {
    Ok(estimate_roa(model, eq, &roa.config())?)
}

fn cmd_roa(grid: &Path, solver: &SolverArgs, roa: &RoaArgs, inputs: &mut Vec<InputDigest>) -> Result<Outcome> {
    let Loaded { file, model } = load(grid, inputs)?;
    let eq = equilibrium(&model, solver)?;
    let est = region(&model, &eq, roa)?;
    let mut table = Table::new(&["node", "p [pu]", "v_eq [pu]", "v_min [pu]", "v_min [V]"]);
    for (i, t) in model.terminals().iter().enumerate() {
        table.row(vec![
            t.node.to_string(),
            format!("{:.4}", t.p),
            format!("{:.4}", eq.v_eq[i]),
            format!("{:.4}", est.v_min[i]),
            format!("{:.2}", est.v_min[i] * file.base.v_volts),
        ]);
    }
    table.print();
    eprintln!(
        "alpha = {:.9e}{}, corner lambda_min = {:.3e}",
        est.alpha,
        if est.unbounded { " (unbounded)" } else { "" },
        est.lambda_min
    );
    Ok(json!({ "nodes": node_ids(&model), "v_eq": eq.v_eq, "roa": est }).into())
}

#[derive(Serialize)]
struct RunSummary {
    name: String,
    start: Vec<f64>,
    csv: String,
    events: String,
    diverged: bool,
    final_time: f64,
    final_error: f64,
    settling_time: Option<f64>,
    disconnects: usize,
    reconnects: usize,
    lyapunov_monotone: bool,
    lyapunov_advisory: bool,
}

fn write_run(out: &Path, name: &str, traj: &Trajectory, eq: &DVector<f64>) -> Result<RunSummary> {
    let csv = out.join(format!("{name}.csv"));
    let events = out.join(format!("{name}_events.json"));
    let file = std::fs::File::create(&csv).with_context(|| format!("creating {}", csv.display()))?;
    traj.write_csv(std::io::BufWriter::new(file))?;
    std::fs::write(&events, traj.events_json()? + "\n").with_context(|| format!("writing {}", events.display()))?;
    let monitor = lyapunov_monitor(traj);
    Ok(RunSummary {
        name: name.to_string(),
        start: traj.samples[0].v.clone(),
        csv: csv.display().to_string(),
        events: events.display().to_string(),
        diverged: traj.diverged,
        final_time: traj.final_time(),
        final_error: traj.final_error(eq),
        settling_time: traj.settling_time(eq, 1e-6),
        disconnects: traj.events_of(EventKind::Disconnect).count(),
        reconnects: traj.events_of(EventKind::Reconnect).count(),
        lyapunov_monotone: monitor.monotone,
        lyapunov_advisory: monitor.advisory,
    })
}

fn cmd_simulate(
    grid: &Path,
    sim: &SimArgs,
    solver: &SolverArgs,
    roa: &RoaArgs,
    inputs: &mut Vec<InputDigest>,
) -> Result<Outcome> {
    let Loaded { model, .. } = load(grid, inputs)?;
    inputs.push(InputDigest::of("scenario", &sim.scenario)?);
    let spec = ScenarioFile::load(&sim.scenario)?;
    let variant = DroopVariant::from(sim.variant);
    let cfg = IntegratorConfig { rtol: sim.rtol, atol: sim.atol, ..IntegratorConfig::default() };
    let eq = equilibrium(&model, solver)?;
    let needs_region = sim.protect || spec.sag.is_some();
    let est = if needs_region { Some(region(&model, &eq, roa)?) } else { None };
    std::fs::create_dir_all(&sim.out).with_context(|| format!("creating {}", sim.out.display()))?;

    // (name, scenario, counts towards --fail-on-divergence)
    let mut runs = Vec::new();
    if let Some(sag) = spec.sag {
        let v_min = est.as_ref().map(|r| r.v_min.clone()).unwrap_or_default();
        let mut base = spec.to_scenario(&model, eq.v_eq.clone())?;
        base = base.with_sag(sag.v0_pu, sag.t_start, sag.t_end, model.v0());
        base.v0_schedule.sort_by(|a, b| a.t.total_cmp(&b.t));
        let guarded = base.clone().with_protection(spec.protection(v_min));
        runs.push(("unprotected".to_string(), base, false));
        runs.push(("protected".to_string(), guarded, true));
    } else {
        let starts = if spec.starts.is_empty() { vec![eq.v_eq.clone()] } else { spec.starts.clone() };
        for (i, start) in starts.into_iter().enumerate() {
            let mut sc = spec.to_scenario(&model, start)?;
            if let Some(r) = &est {
                sc = sc.with_protection(spec.protection(r.v_min.clone()));
            }
            runs.push((format!("run_{i}"), sc, true));
        }
    }

    let trajectories = par::map(&runs, |(_, sc, _)| simulate(&model, sc, variant, &cfg));
    let target = eq.v();
    let mut summaries = Vec::new();
    let mut failed = Vec::new();
    let mut table = Table::new(&["run", "diverged", "t_final", "|v - v_eq|", "trips", "reconnects"]);
    for ((name, _, counts), traj) in runs.iter().zip(trajectories) {
        let traj = traj.with_context(|| format!("run {name}"))?;
        let s = write_run(&sim.out, name, &traj, &target)?;
        if s.diverged && *counts {
            failed.push(name.clone());
        }
        table.row(vec![
            name.clone(),
            s.diverged.to_string(),
            format!("{:.6}", s.final_time),
            format!("{:.3e}", s.final_error),
            s.disconnects.to_string(),
            s.reconnects.to_string(),
        ]);
        summaries.push(s);
    }
    table.print();

    let result = json!({
        "nodes": node_ids(&model),
        "variant": variant,
        "v_eq": eq.v_eq,
        "v_min": est.as_ref().map(|r| r.v_min.clone()),
        "runs": summaries,
        "any_diverged": summaries.iter().any(|s| s.diverged),
    });
    let failure = (sim.fail_on_divergence && !failed.is_empty()).then(|| anyhow::Error::new(Diverged(failed)));
    Ok(Outcome { result, failure })
}
