//! `slowfast` — command-line driver for the averaged multiscale solver.
//!
//! Subcommands:
//!   reference       resolved trapezoidal reference with Richardson extrapolation
//!   multiscale      one averaged solve on a uniform mesh (trajectory CSV)
//!   estimate        solve + dual solve + error estimate (summary / breakdown CSV)
//!   convergence     uniform-run table over a grid of (K, k) pairs
//!   adapt           adaptive solve–estimate–refine loop (trace CSV)
//!   compare-effort  effort table: uniform family vs adaptive (vs resolved)
//!
//! Every value flag can also come from a `key=value` configuration file
//! (`--config FILE`); explicit flags win. All CSV output uses `.` decimals,
//! a header row, and a fixed float format, so repeated runs are
//! byte-identical. Exit codes: 0 success, 1 solver failure, 2 bad
//! configuration.

mod config;

use std::io::Write as IoWrite;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use slowfast_core::{
    adapt_loop, estimate, estimate_adjoint_conformity, extrapolate, make_benchmark, report,
    solve_macro, solve_macro_adjoint, solve_resolved, total_effort, AdaptConfig, BenchmarkId,
    DampingVariant, GoalFunctional, MacroMesh, MacroOptions, Oscillator, ResolvedOptions,
    SlowFastSystem,
};

use config::FileConfig;

/// Non-uniform macro-step divisor ladder of the uniform-run table: the macro
/// step of column `i` is `horizon / MACRO_DIVISORS[i]`.
const MACRO_DIVISORS: [f64; 6] = [6.0, 12.0, 30.0, 60.0, 120.0, 240.0];
/// Base micro step of the uniform-run table; row `j` uses `0.1 / 2^j`.
const BASE_MICRO_STEP: f64 = 0.1;

#[derive(Parser)]
#[command(
    name = "slowfast",
    version,
    about = "Averaged multiscale solver for slow/fast ODE systems with dual-weighted error control"
)]
struct Cli {
    /// Plain-text key=value configuration file; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Size of the worker thread pool (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the fully resolved system at three halved steps and extrapolate.
    Reference(ReferenceArgs),
    /// Run one averaged multiscale solve and write the slow trajectory.
    Multiscale(RunArgs),
    /// Solve, solve the dual problem, and write the error-estimate summary.
    Estimate(EstimateArgs),
    /// Tabulate error and estimator over a grid of (K, k) pairs.
    Convergence(ConvergenceArgs),
    /// Run the adaptive solve-estimate-refine loop and write its trace.
    Adapt(AdaptArgs),
    /// Compare the effort of uniform refinement against the adaptive loop.
    CompareEffort(CompareEffortArgs),
}

/// Flags shared by every solving subcommand.
#[derive(Args, Debug, Clone, Default)]
struct RunArgs {
    /// Benchmark problem: osc1 or osc2 (default osc1).
    #[arg(long)]
    problem: Option<String>,
    /// Fast-equation damping variant for osc1: half or three-fifths.
    #[arg(long)]
    damping: Option<String>,
    /// Macro step size (time units; must tile the horizon).
    #[arg(long = "K", value_name = "K")]
    macro_step: Option<f64>,
    /// Micro step size (fractions of the fast period; 1/k must be an even integer).
    #[arg(long = "k", value_name = "k")]
    micro_step: Option<f64>,
    /// Periodicity tolerance of the micro cycling.
    #[arg(long)]
    tolp: Option<f64>,
    /// Output path for the primary CSV (default: stdout).
    #[arg(long, value_name = "FILE")]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct ReferenceArgs {
    /// Benchmark problem: osc1 or osc2 (default osc1).
    #[arg(long)]
    problem: Option<String>,
    /// Fast-equation damping variant for osc1: half or three-fifths.
    #[arg(long)]
    damping: Option<String>,
    /// Base resolved step; the solver also runs step/2 and step/4 (default 0.01).
    #[arg(long)]
    step: Option<f64>,
    /// Output path for the reference CSV (default: stdout).
    #[arg(long, value_name = "FILE")]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Reference goal value; enables the error and effectivity columns.
    #[arg(long = "ref-value", value_name = "J")]
    ref_value: Option<f64>,
    /// Also write the interval-wise indicator breakdown to this CSV file.
    #[arg(long, value_name = "FILE")]
    breakdown: Option<String>,
}

#[derive(Args, Debug)]
struct ConvergenceArgs {
    /// Benchmark problem: osc1 or osc2 (default osc1).
    #[arg(long)]
    problem: Option<String>,
    /// Fast-equation damping variant for osc1: half or three-fifths.
    #[arg(long)]
    damping: Option<String>,
    /// Periodicity tolerance of the micro cycling.
    #[arg(long)]
    tolp: Option<f64>,
    /// Number of macro-step columns to run, coarsest first (1..=6, default 6).
    #[arg(long)]
    imax: Option<usize>,
    /// Number of micro-step rows to run, coarsest first (default 6).
    #[arg(long)]
    jmax: Option<usize>,
    /// Reference goal value; computed from a resolved solve when absent.
    #[arg(long = "ref-value", value_name = "J")]
    ref_value: Option<f64>,
    /// Output path for the summary CSV (default: stdout).
    #[arg(long, value_name = "FILE")]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Marking dominance factor (default 1.2).
    #[arg(long)]
    beta: Option<f64>,
    /// Cap on solve-estimate-refine sweeps (default 12).
    #[arg(long)]
    iters: Option<usize>,
    /// Stop once |eta_total| falls below this.
    #[arg(long = "target-error", value_name = "TOL")]
    target_error: Option<f64>,
    /// Also write the final sweep's indicator breakdown to this CSV file.
    #[arg(long, value_name = "FILE")]
    breakdown: Option<String>,
    /// Also write the final solved mesh to this CSV file.
    #[arg(long, value_name = "FILE")]
    mesh: Option<String>,
}

#[derive(Args, Debug)]
struct CompareEffortArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Marking dominance factor of the adaptive run (default 1.2).
    #[arg(long)]
    beta: Option<f64>,
    /// Sweep cap of the adaptive run and size cap of the uniform family (default 12).
    #[arg(long)]
    iters: Option<usize>,
    /// Error target both approaches aim for (default 5e-5).
    #[arg(long = "target-error", value_name = "TOL")]
    target_error: Option<f64>,
    /// Reference goal value; enables the true-error column and error-based stopping.
    #[arg(long = "ref-value", value_name = "J")]
    ref_value: Option<f64>,
    /// Also time-step the resolved system at this step and report its raw step count.
    #[arg(long = "resolved-step", value_name = "STEP")]
    resolved_step: Option<f64>,
}

/// CLI failure, split by exit code.
enum CliError {
    /// Exit 2: bad flags, bad config file, inconsistent step sizes.
    Config(String),
    /// Exit 1: a solver failed to converge or an output could not be written.
    Solver(String),
}

impl From<slowfast_core::Error> for CliError {
    fn from(e: slowfast_core::Error) -> Self {
        use slowfast_core::Error as E;
        match e {
            E::Config(_) | E::Structure(_) | E::Usage(_) => CliError::Config(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Solver(format!("i/o error: {e}"))
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(0),
        Err(CliError::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(path) => FileConfig::load(path).map_err(CliError::Config)?,
        None => FileConfig::default(),
    };
    if let Some(jobs) = get(&cfg, cli.jobs, "jobs")? {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        // Ignore the error when a pool already exists (e.g. repeated in-process runs).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match cli.command {
        Command::Reference(args) => cmd_reference(&cfg, args),
        Command::Multiscale(args) => cmd_multiscale(&cfg, args),
        Command::Estimate(args) => cmd_estimate(&cfg, args),
        Command::Convergence(args) => cmd_convergence(&cfg, args),
        Command::Adapt(args) => cmd_adapt(&cfg, args),
        Command::CompareEffort(args) => cmd_compare_effort(&cfg, args),
    }
}

// ---------------------------------------------------------------------------
// Settings resolution (flag > config file > default)
// ---------------------------------------------------------------------------

fn get<T: FromStr>(cfg: &FileConfig, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
    cfg.resolve(flag, key).map_err(CliError::Config)
}

fn get_or<T: FromStr>(cfg: &FileConfig, flag: Option<T>, key: &str, default: T) -> CliResult<T> {
    Ok(get(cfg, flag, key)?.unwrap_or(default))
}

/// Builds the benchmark system and its goal functional (the first slow
/// component at the final time).
fn build_system(
    cfg: &FileConfig,
    problem: Option<String>,
    damping: Option<String>,
) -> CliResult<(Oscillator, GoalFunctional)> {
    let name = get_or(cfg, problem, "problem", "osc1".to_string())?;
    let id: BenchmarkId = name.parse().map_err(|e: slowfast_core::Error| CliError::Config(e.to_string()))?;
    let damping = match get::<String>(cfg, damping, "damping")? {
        Some(s) => Some(
            s.parse::<DampingVariant>()
                .map_err(|e: slowfast_core::Error| CliError::Config(e.to_string()))?,
        ),
        None => None,
    };
    Ok((make_benchmark(id, damping), GoalFunctional::terminal_component(0)))
}

/// Macro options with the periodicity tolerance applied.
fn macro_options(cfg: &FileConfig, tolp: Option<f64>) -> CliResult<MacroOptions> {
    let mut options = MacroOptions::default();
    if let Some(tol) = get(cfg, tolp, "tolp")? {
        if !(tol > 0.0) {
            return Err(CliError::Config(format!("tolp must be positive, got {tol}")));
        }
        options.orbit.periodicity_tol = tol;
    }
    Ok(options)
}

/// Resolves the uniform mesh of a single-run subcommand. Defaults:
/// `K = horizon / 20`, `k = 0.05`.
fn resolve_mesh(cfg: &FileConfig, run: &RunArgs, system: &Oscillator) -> CliResult<MacroMesh> {
    let horizon = system.horizon();
    let macro_step = get_or(cfg, run.macro_step, "K", horizon / 20.0)?;
    let micro_step = get_or(cfg, run.micro_step, "k", 0.05)?;
    Ok(MacroMesh::uniform(horizon, macro_step, micro_step)?)
}

/// Opens the primary output: stdout for `None` or `-`, a file otherwise.
fn open_out(path: &Option<String>) -> CliResult<Box<dyn IoWrite>> {
    match path.as_deref() {
        None | Some("-") => Ok(Box::new(std::io::BufWriter::new(std::io::stdout()))),
        Some(p) => {
            let file = std::fs::File::create(p)
                .map_err(|e| CliError::Config(format!("cannot create output file {p}: {e}")))?;
            Ok(Box::new(std::io::BufWriter::new(file)))
        }
    }
}

// ---------------------------------------------------------------------------
// Subcommand drivers
// ---------------------------------------------------------------------------

fn cmd_reference(cfg: &FileConfig, args: ReferenceArgs) -> CliResult<()> {
    let (system, goal) = build_system(cfg, args.problem, args.damping)?;
    let step = get_or(cfg, args.step, "step", 0.01)?;
    if !(step > 0.0) {
        return Err(CliError::Config(format!("step must be positive, got {step}")));
    }
    let options = ResolvedOptions::default();
    let mut entries = Vec::new();
    for divisor in [1.0, 2.0, 4.0] {
        let s = step / divisor;
        let run = solve_resolved(&system, s, &options)?;
        let value = goal.evaluate(&run.terminal_slow);
        eprintln!(
            "resolved step {s:.6e}: J = {value:.9}, {} steps, {} pre-cycles (defect {:.2e})",
            run.steps, run.precycles, run.precycle_defect
        );
        entries.push((s, value));
    }
    let ex = extrapolate([entries[0].1, entries[1].1, entries[2].1]);
    eprintln!(
        "extrapolated J = {:.9} (observed order {:.3}{})",
        ex.limit,
        ex.order,
        if ex.reliable { "" } else { ", differences not contracting" }
    );
    let mut out = open_out(&args.out)?;
    report::write_reference_csv(&mut out, &entries, Some(&ex))?;
    out.flush()?;
    Ok(())
}

fn cmd_multiscale(cfg: &FileConfig, args: RunArgs) -> CliResult<()> {
    let (system, goal) = build_system(cfg, args.problem.clone(), args.damping.clone())?;
    let mesh = resolve_mesh(cfg, &args, &system)?;
    let options = macro_options(cfg, args.tolp)?;
    let solution = solve_macro(&system, &mesh, &options)?;
    eprintln!(
        "J = {:.9} on {} intervals ({} orbit solves, {} micro steps, worst cycling {} sweeps, worst defect {:.2e})",
        solution.goal(&goal),
        mesh.interval_count(),
        solution.orbit_solves,
        solution.micro_steps,
        solution.max_cycles,
        solution.max_defect
    );
    let mut out = open_out(&args.out)?;
    report::write_trajectory_csv(&mut out, &solution)?;
    out.flush()?;
    Ok(())
}

fn cmd_estimate(cfg: &FileConfig, args: EstimateArgs) -> CliResult<()> {
    let (system, goal) = build_system(cfg, args.run.problem.clone(), args.run.damping.clone())?;
    let mesh = resolve_mesh(cfg, &args.run, &system)?;
    let options = macro_options(cfg, args.run.tolp)?;
    let reference = get(cfg, args.ref_value, "ref-value")?;

    let solution = solve_macro(&system, &mesh, &options)?;
    let adjoint = solve_macro_adjoint(&system, &solution, &goal)?;
    let breakdown = estimate(&system, &solution, &adjoint, &goal)?;
    let eta_adjoint = estimate_adjoint_conformity(&system, &solution, &adjoint, &options.orbit)?;
    let breakdown = breakdown.with_adjoint_conformity(eta_adjoint);

    let row = report::SummaryRow::from_breakdown(
        mesh.micro_step(0),
        mesh.interval(0).1 - mesh.interval(0).0,
        solution.goal(&goal),
        reference,
        &breakdown,
    );
    eprintln!(
        "J = {:.9}, eta = {:.6e} (macro {:.6e}, micro {:.6e}, dual gap {:.6e}){}",
        row.goal_value,
        row.eta_total,
        row.eta_macro,
        row.eta_micro,
        row.eta_adjoint,
        match (row.error, row.effectivity) {
            (Some(err), Some(eff)) => format!(", err = {err:.6e}, effectivity {:.1}%", 100.0 * eff),
            (Some(err), None) => format!(", err = {err:.6e}"),
            _ => String::new(),
        }
    );
    if let Some(path) = &args.breakdown {
        let mut b = open_out(&Some(path.clone()))?;
        report::write_breakdown_csv(&mut b, &mesh, &breakdown)?;
        b.flush()?;
    }
    let mut out = open_out(&args.run.out)?;
    report::write_summary_csv(&mut out, &[row])?;
    out.flush()?;
    Ok(())
}

fn cmd_convergence(cfg: &FileConfig, args: ConvergenceArgs) -> CliResult<()> {
    let (system, goal) = build_system(cfg, args.problem, args.damping)?;
    let options = macro_options(cfg, args.tolp)?;
    let imax = get_or(cfg, args.imax, "imax", MACRO_DIVISORS.len())?;
    let jmax = get_or(cfg, args.jmax, "jmax", 6)?;
    if imax == 0 || imax > MACRO_DIVISORS.len() {
        return Err(CliError::Config(format!(
            "imax must be in 1..={}, got {imax}",
            MACRO_DIVISORS.len()
        )));
    }
    if jmax == 0 {
        return Err(CliError::Config(format!("jmax must be at least 1, got {jmax}")));
    }

    let reference = match get(cfg, args.ref_value, "ref-value")? {
        Some(v) => v,
        None => {
            eprintln!("no --ref-value given; computing a resolved reference first");
            let opts = ResolvedOptions::default();
            let mut values = [0.0; 3];
            for (slot, divisor) in [1.0, 2.0, 4.0].iter().enumerate() {
                let run = solve_resolved(&system, 0.01 / divisor, &opts)?;
                values[slot] = goal.evaluate(&run.terminal_slow);
            }
            let ex = extrapolate(values);
            eprintln!("resolved reference J = {:.9} (order {:.3})", ex.limit, ex.order);
            ex.limit
        }
    };

    let horizon = system.horizon();
    let cells: Vec<(f64, f64)> = MACRO_DIVISORS[..imax]
        .iter()
        .flat_map(|divisor| {
            (0..jmax).map(move |j| (horizon / divisor, BASE_MICRO_STEP / (1u64 << j) as f64))
        })
        .collect();

    let results: Vec<Result<report::SummaryRow, String>> = cells
        .par_iter()
        .map(|&(macro_step, micro_step)| {
            run_cell(&system, &goal, macro_step, micro_step, &options, reference)
                .map_err(|e| match e {
                    CliError::Config(m) | CliError::Solver(m) => m,
                })
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = 0usize;
    for (cell, result) in cells.iter().zip(results) {
        match result {
            Ok(row) => rows.push(row),
            Err(msg) => {
                failures += 1;
                eprintln!("cell K={}, k={} failed: {msg}", cell.0, cell.1);
            }
        }
    }
    let mut out = open_out(&args.out)?;
    report::write_summary_csv(&mut out, &rows)?;
    out.flush()?;
    if failures > 0 {
        Err(CliError::Solver(format!("{failures} of {} cells failed", cells.len())))
    } else {
        Ok(())
    }
}

/// Runs one cell of the uniform-run table: solve, dual solve, estimate.
fn run_cell(
    system: &Oscillator,
    goal: &GoalFunctional,
    macro_step: f64,
    micro_step: f64,
    options: &MacroOptions,
    reference: f64,
) -> CliResult<report::SummaryRow> {
    let mesh = MacroMesh::uniform(system.horizon(), macro_step, micro_step)?;
    let solution = solve_macro(system, &mesh, options)?;
    let adjoint = solve_macro_adjoint(system, &solution, goal)?;
    let breakdown = estimate(system, &solution, &adjoint, goal)?;
    let eta_adjoint = estimate_adjoint_conformity(system, &solution, &adjoint, &options.orbit)?;
    let breakdown = breakdown.with_adjoint_conformity(eta_adjoint);
    Ok(report::SummaryRow::from_breakdown(
        micro_step,
        macro_step,
        solution.goal(goal),
        Some(reference),
        &breakdown,
    ))
}

fn cmd_adapt(cfg: &FileConfig, args: AdaptArgs) -> CliResult<()> {
    let (system, goal) = build_system(cfg, args.run.problem.clone(), args.run.damping.clone())?;
    let mesh = resolve_mesh(cfg, &args.run, &system)?;
    let config = AdaptConfig {
        beta: get_or(cfg, args.beta, "beta", 1.2)?,
        max_iterations: get_or(cfg, args.iters, "iters", 12)?,
        target_error: get(cfg, args.target_error, "target-error")?,
        macro_options: macro_options(cfg, args.run.tolp)?,
    };
    if !(config.beta >= 1.0) {
        return Err(CliError::Config(format!("beta must be at least 1, got {}", config.beta)));
    }
    if config.max_iterations == 0 {
        return Err(CliError::Config("iters must be at least 1".into()));
    }

    let trace = adapt_loop(&system, &mesh, &goal, &config)?;
    let last = trace.iterations.last().expect("adapt loop always runs at least one sweep");
    eprintln!(
        "stopped after {} sweeps ({:?}): J = {:.9}, eta = {:.6e}, {} intervals, cumulative effort {:.0}",
        trace.iterations.len(),
        trace.stop,
        last.goal_value,
        last.breakdown.eta_total(),
        last.mesh.interval_count(),
        trace.cumulative_effort
    );
    if let Some(path) = &args.breakdown {
        let mut b = open_out(&Some(path.clone()))?;
        report::write_breakdown_csv(&mut b, &last.mesh, &last.breakdown)?;
        b.flush()?;
    }
    if let Some(path) = &args.mesh {
        let mut m = open_out(&Some(path.clone()))?;
        report::write_mesh_csv(&mut m, &last.mesh)?;
        m.flush()?;
    }
    let mut out = open_out(&args.run.out)?;
    report::write_adapt_trace_csv(&mut out, &trace)?;
    out.flush()?;
    Ok(())
}

fn cmd_compare_effort(cfg: &FileConfig, args: CompareEffortArgs) -> CliResult<()> {
    let (system, goal) = build_system(cfg, args.run.problem.clone(), args.run.damping.clone())?;
    let mesh = resolve_mesh(cfg, &args.run, &system)?;
    let options = macro_options(cfg, args.run.tolp)?;
    let beta = get_or(cfg, args.beta, "beta", 1.2)?;
    let iters = get_or(cfg, args.iters, "iters", 12)?;
    let target = get_or(cfg, args.target_error, "target-error", 5.0e-5)?;
    let reference = get(cfg, args.ref_value, "ref-value")?;
    let resolved_step = get(cfg, args.resolved_step, "resolved-step")?;
    if !(target > 0.0) {
        return Err(CliError::Config(format!("target-error must be positive, got {target}")));
    }

    let mut rows = Vec::new();

    if let Some(step) = resolved_step {
        let run = solve_resolved(&system, step, &ResolvedOptions::default())?;
        let value = goal.evaluate(&run.terminal_slow);
        eprintln!("resolved step {step:.6e}: J = {value:.9}, {} raw steps", run.steps);
        rows.push(report::EffortRow {
            approach: "resolved".to_string(),
            error: reference.map(|r| value - r),
            micro_step: step,
            macro_step: None,
            steps: run.steps as f64,
        });
    }

    // Uniform family: halve both steps until the target is met (true error
    // when a reference is known, |eta_total| otherwise) or the cap is hit.
    let base_macro = mesh.interval(0).1 - mesh.interval(0).0;
    let base_micro = mesh.micro_step(0);
    for level in 0..iters {
        let scale = (1u64 << level) as f64;
        let macro_step = base_macro / scale;
        let micro_step = base_micro / scale;
        let row = run_cell(&system, &goal, macro_step, micro_step, &options, reference.unwrap_or(f64::NAN))?;
        let error = reference.map(|_| row.error.unwrap_or(f64::NAN));
        let gauge = error.map(f64::abs).unwrap_or_else(|| row.eta_total.abs());
        eprintln!(
            "uniform K={macro_step}, k={micro_step}: J = {:.9}, eta = {:.6e}, effort {:.0}",
            row.goal_value,
            row.eta_total,
            total_effort(&MacroMesh::uniform(system.horizon(), macro_step, micro_step)?)
        );
        rows.push(report::EffortRow {
            approach: "uniform".to_string(),
            error,
            micro_step,
            macro_step: Some(macro_step),
            steps: total_effort(&MacroMesh::uniform(system.horizon(), macro_step, micro_step)?),
        });
        if gauge <= target {
            break;
        }
    }

    // Adaptive run from the same starting mesh, aiming at the same target.
    let config = AdaptConfig {
        beta,
        max_iterations: iters,
        target_error: Some(target),
        macro_options: options,
    };
    let trace = adapt_loop(&system, &mesh, &goal, &config)?;
    let last = trace.iterations.last().expect("adapt loop always runs at least one sweep");
    let min_micro = (0..last.mesh.interval_count())
        .map(|n| last.mesh.micro_step(n))
        .fold(f64::INFINITY, f64::min);
    let min_macro = (0..last.mesh.interval_count())
        .map(|n| {
            let (a, b) = last.mesh.interval(n);
            b - a
        })
        .fold(f64::INFINITY, f64::min);
    eprintln!(
        "adaptive: {} sweeps ({:?}), J = {:.9}, eta = {:.6e}, final-mesh effort {:.0} (cumulative {:.0})",
        trace.iterations.len(),
        trace.stop,
        last.goal_value,
        last.breakdown.eta_total(),
        total_effort(&last.mesh),
        trace.cumulative_effort
    );
    rows.push(report::EffortRow {
        approach: "adaptive".to_string(),
        error: reference.map(|r| last.goal_value - r),
        micro_step: min_micro,
        macro_step: Some(min_macro),
        steps: total_effort(&last.mesh),
    });

    let mut out = open_out(&args.run.out)?;
    report::write_effort_csv(&mut out, &rows)?;
    out.flush()?;
    Ok(())
}
