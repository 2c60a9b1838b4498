//! End-to-end acceptance runs on the two benchmark oscillators.
//!
//! Each test prints one pass/fail line for one contract: reference values and
//! their observed order, anchor cells of the uniform-run study, convergence
//! orders of the error and of the estimator parts, estimator localization,
//! duality checks against finite differences, adaptive-versus-uniform effort,
//! the periodic-orbit contract, and CSV trace export. Expensive artifacts
//! (resolved references, the 36-cell uniform grid, the adaptive study) are
//! computed once and shared across tests.

use nalgebra::{DMatrix, DVector};
use slowfast_core::quadrature::{gauss_points, GAUSS_THETA};
use slowfast_core::report::{
    write_adapt_trace_csv, write_breakdown_csv, write_effort_csv, write_mesh_csv,
    write_reference_csv, write_summary_csv, EffortRow, SummaryRow,
};
use slowfast_core::{
    adapt_loop, estimate, estimate_adjoint_conformity, extrapolate, make_benchmark, solve_macro,
    solve_macro_adjoint, solve_micro_adjoint, solve_periodic, solve_resolved, solve_tangent,
    total_effort, transfer, transfer_grad_full, AdaptConfig, AdaptTrace, BenchmarkId,
    DampingVariant, ExtrapolationResult, GoalFunctional, MacroMesh, MacroOptions, MicroGrid,
    OrbitOptions, ResolvedOptions, SlowFastSystem, StopReason,
};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

/// Target goal values for the two benchmarks.
const OSC1_GOAL: f64 = 1.08704164;
const OSC2_GOAL: f64 = 0.59223654;

/// Macro widths of the uniform study: horizon divided by these.
const MACRO_DIVISORS: [f64; 6] = [6.0, 12.0, 30.0, 60.0, 120.0, 240.0];
/// Micro steps of the uniform study: 0.1 halved this many times.
const MICRO_HALVINGS: u32 = 6;
/// Error target shared by the adaptive run and the uniform family.
const ADAPT_TARGET: f64 = 5.0e-5;

fn goal0() -> GoalFunctional {
    GoalFunctional::terminal_component(0)
}

/// Least-squares slope of `ln y` against `ln x`.
fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

struct Reference {
    entries: [(f64, f64); 3],
    ex: ExtrapolationResult,
    elapsed: Duration,
}

fn resolved_reference(id: BenchmarkId) -> Reference {
    let sys = make_benchmark(id, None);
    let opts = ResolvedOptions::default();
    let start = Instant::now();
    let mut entries = [(0.0, 0.0); 3];
    for (i, div) in [1.0, 2.0, 4.0].into_iter().enumerate() {
        let k = 0.01 / div;
        let run = solve_resolved(&sys, k, &opts).expect("resolved solve");
        entries[i] = (k, run.goal(&goal0()));
    }
    let ex = extrapolate([entries[0].1, entries[1].1, entries[2].1]);
    Reference { entries, ex, elapsed: start.elapsed() }
}

fn osc1_reference() -> &'static Reference {
    static CELL: OnceLock<Reference> = OnceLock::new();
    CELL.get_or_init(|| resolved_reference(BenchmarkId::Osc1))
}

fn osc2_reference() -> &'static Reference {
    static CELL: OnceLock<Reference> = OnceLock::new();
    CELL.get_or_init(|| resolved_reference(BenchmarkId::Osc2))
}

struct Cell {
    row: SummaryRow,
    /// |sum of localized parts − reported total|.
    localization_gap: f64,
    max_defect: f64,
    max_cycles: usize,
}

struct Grid {
    cells: Vec<Cell>,
    elapsed: Duration,
}

/// The full 36-cell uniform study on the first benchmark, with the estimator
/// (all three parts) evaluated on every cell.
fn grid() -> &'static Grid {
    static CELL: OnceLock<Grid> = OnceLock::new();
    CELL.get_or_init(|| {
        let reference = osc1_reference().ex.limit;
        let sys = make_benchmark(BenchmarkId::Osc1, None);
        let goal = goal0();
        let options = MacroOptions::default();
        let start = Instant::now();
        let mut cells = Vec::with_capacity(36);
        for div in MACRO_DIVISORS {
            let macro_step = sys.horizon() / div;
            for j in 0..MICRO_HALVINGS {
                let micro_step = 0.1 / f64::from(1u32 << j);
                let mesh = MacroMesh::uniform(sys.horizon(), macro_step, micro_step)
                    .expect("uniform mesh");
                let solution = solve_macro(&sys, &mesh, &options).expect("macro solve");
                let adjoint = solve_macro_adjoint(&sys, &solution, &goal).expect("adjoint solve");
                let breakdown = estimate(&sys, &solution, &adjoint, &goal).expect("estimate");
                let eta_adj =
                    estimate_adjoint_conformity(&sys, &solution, &adjoint, solution.orbit_options())
                        .expect("conformity estimate");
                let breakdown = breakdown.with_adjoint_conformity(eta_adj);
                let by_parts: f64 = breakdown.eta_macro.iter().sum::<f64>()
                    + breakdown.eta_micro.iter().sum::<f64>()
                    + breakdown.eta_adjoint;
                cells.push(Cell {
                    row: SummaryRow::from_breakdown(
                        micro_step,
                        macro_step,
                        solution.goal(&goal),
                        Some(reference),
                        &breakdown,
                    ),
                    localization_gap: (by_parts - breakdown.eta_total()).abs(),
                    max_defect: solution.max_defect,
                    max_cycles: solution.max_cycles,
                });
            }
        }
        Grid { cells, elapsed: start.elapsed() }
    })
}

fn cell(macro_step: f64, micro_step: f64) -> &'static Cell {
    grid()
        .cells
        .iter()
        .find(|c| c.row.macro_step == macro_step && c.row.micro_step == micro_step)
        .expect("grid cell")
}

struct UniformRun {
    macro_step: f64,
    micro_step: f64,
    error: f64,
    effort: f64,
    max_defect: f64,
    max_cycles: usize,
}

struct EffortStudy {
    trace: AdaptTrace,
    /// Stats of a fresh solve on the last mesh the adaptive loop accepted.
    final_defect: f64,
    final_cycles: usize,
    /// Uniform halving family from the same starting mesh, stopped at the
    /// first member meeting the error target.
    uniform: Vec<UniformRun>,
}

/// The adaptive run on the second benchmark plus its uniform competitors.
fn effort_study() -> &'static EffortStudy {
    static CELL: OnceLock<EffortStudy> = OnceLock::new();
    CELL.get_or_init(|| {
        let reference = osc2_reference().ex.limit;
        let sys = make_benchmark(BenchmarkId::Osc2, None);
        let goal = goal0();
        let start_mesh = MacroMesh::uniform(sys.horizon(), 5.0e4, 0.05).expect("start mesh");
        let config = AdaptConfig {
            beta: 1.2,
            max_iterations: 12,
            target_error: Some(ADAPT_TARGET),
            macro_options: MacroOptions::default(),
        };
        let trace = adapt_loop(&sys, &start_mesh, &goal, &config).expect("adaptive loop");
        let final_solution =
            solve_macro(&sys, &trace.last().mesh, &config.macro_options).expect("final solve");

        let mut uniform = Vec::new();
        for j in 0..6 {
            let scale = f64::from(1u32 << j);
            let mesh = MacroMesh::uniform(sys.horizon(), 5.0e4 / scale, 0.05 / scale)
                .expect("uniform mesh");
            let solution = solve_macro(&sys, &mesh, &config.macro_options).expect("macro solve");
            let error = solution.goal(&goal) - reference;
            uniform.push(UniformRun {
                macro_step: 5.0e4 / scale,
                micro_step: 0.05 / scale,
                error,
                effort: total_effort(&mesh),
                max_defect: solution.max_defect,
                max_cycles: solution.max_cycles,
            });
            if error.abs() <= ADAPT_TARGET {
                break;
            }
        }
        EffortStudy {
            trace,
            final_defect: final_solution.max_defect,
            final_cycles: final_solution.max_cycles,
            uniform,
        }
    })
}

// ---------------------------------------------------------------------------
// Reference values
// ---------------------------------------------------------------------------

#[test]
fn reference_values_and_observed_order() {
    // The half-damping variant of the first benchmark misses its target goal
    // value by far more than 1e-4, which is why the three-fifths variant is
    // the recorded default for it.
    let half = make_benchmark(BenchmarkId::Osc1, Some(DampingVariant::Half));
    let run = solve_resolved(&half, 0.01, &ResolvedOptions::default()).expect("resolved solve");
    let half_miss = (run.goal(&goal0()) - OSC1_GOAL).abs();
    assert!(
        half_miss > 1.0e-4,
        "half-damping variant lands {half_miss:.2e} from the first target; expected a clear miss"
    );

    let budget = Duration::from_secs(900);
    let r1 = osc1_reference();
    assert!(r1.elapsed <= budget, "first reference took {:?} (budget {budget:?})", r1.elapsed);
    assert!(r1.ex.reliable, "first reference extrapolation unreliable: {:?}", r1.ex);
    assert!(
        (r1.ex.order - 2.0).abs() <= 0.05,
        "first reference observed order {:.4} outside 2.00 +/- 0.05",
        r1.ex.order
    );
    assert!(
        (r1.ex.limit - OSC1_GOAL).abs() <= 1.0e-5,
        "first reference limit {:.10} misses {OSC1_GOAL} by {:+.3e} (tolerance 1e-5)",
        r1.ex.limit,
        r1.ex.limit - OSC1_GOAL
    );

    let r2 = osc2_reference();
    assert!(r2.elapsed <= budget, "second reference took {:?} (budget {budget:?})", r2.elapsed);
    assert!(r2.ex.reliable, "second reference extrapolation unreliable: {:?}", r2.ex);
    assert!(
        (r2.ex.order - 2.0).abs() <= 0.05,
        "second reference observed order {:.4} outside 2.00 +/- 0.05",
        r2.ex.order
    );
    assert!(
        (r2.ex.limit - OSC2_GOAL).abs() <= 1.0e-5,
        "second reference limit {:.10} misses {OSC2_GOAL} by {:+.3e} (tolerance 1e-5); \
         the limit is grid-independent here (halving ratio {:.4}), so the gap cannot be \
         closed by further refinement",
        r2.ex.limit,
        r2.ex.limit - OSC2_GOAL,
        r2.ex.d1 / r2.ex.d2,
    );
}

// ---------------------------------------------------------------------------
// Uniform-run anchor cells
// ---------------------------------------------------------------------------

#[test]
fn uniform_run_anchor_cells() {
    let coarse = &cell(1.0e5, 0.1).row;
    let err = coarse.error.expect("error with reference");
    assert!(
        (err / 4.52e-2 - 1.0).abs() <= 0.03,
        "coarse-cell error {err:+.4e} not within 3% of 4.52e-2"
    );
    assert!(
        (coarse.eta_total / 2.81e-2 - 1.0).abs() <= 0.15,
        "coarse-cell estimate {:+.4e} not within 15% of 2.81e-2",
        coarse.eta_total
    );
    let eff = coarse.effectivity.expect("effectivity");
    assert!(
        (eff - 62.1).abs() <= 5.0,
        "coarse-cell effectivity {eff:.1}% not within 5 points of 62.1%"
    );

    let fine = &cell(2.5e3, 0.003125).row;
    let err = fine.error.expect("error with reference");
    assert!(
        (err / 3.77e-5 - 1.0).abs() <= 0.10,
        "fine-cell error {err:+.4e} not within 10% of 3.77e-5"
    );
    assert!(
        (fine.eta_total / 3.82e-5 - 1.0).abs() <= 0.15,
        "fine-cell estimate {:+.4e} not within 15% of 3.82e-5",
        fine.eta_total
    );
    let eff = fine.effectivity.expect("effectivity");
    assert!(
        (eff - 101.3).abs() <= 5.0,
        "fine-cell effectivity {eff:.1}% not within 5 points of 101.3%"
    );
}

// ---------------------------------------------------------------------------
// Convergence orders of the true error
// ---------------------------------------------------------------------------

#[test]
fn error_convergence_is_second_order() {
    let g = grid();
    let budget = Duration::from_secs(1800);
    assert!(g.elapsed <= budget, "36-cell grid took {:?} (budget {budget:?})", g.elapsed);

    // Error versus micro step at the finest macro width.
    let pts: Vec<(f64, f64)> = g
        .cells
        .iter()
        .filter(|c| c.row.macro_step == 2.5e3)
        .map(|c| (c.row.micro_step, c.row.error.expect("error").abs()))
        .collect();
    assert_eq!(pts.len(), 6);
    let slope = log_log_slope(&pts);
    assert!(
        (slope - 2.0).abs() <= 0.1,
        "error-vs-micro-step slope {slope:.4} outside 2.0 +/- 0.1"
    );

    // Error versus macro width at the finest micro step. The finest-width
    // error is almost pure micro error; subtracting it isolates the macro
    // component whose order is being measured.
    let mut col: Vec<(f64, f64)> = g
        .cells
        .iter()
        .filter(|c| c.row.micro_step == 0.003125)
        .map(|c| (c.row.macro_step, c.row.error.expect("error")))
        .collect();
    assert_eq!(col.len(), 6);
    col.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let floor = col.last().unwrap().1;
    let pts: Vec<(f64, f64)> =
        col[..5].iter().map(|&(w, e)| (w, (e - floor).abs())).collect();
    let slope = log_log_slope(&pts);
    assert!(
        (slope - 2.0).abs() <= 0.15,
        "error-vs-macro-width slope {slope:.4} outside 2.0 +/- 0.15"
    );
}

// ---------------------------------------------------------------------------
// Convergence orders of the estimator parts
// ---------------------------------------------------------------------------

#[test]
fn estimator_parts_scale_at_their_own_order() {
    let g = grid();
    // Aggregate per-halving ratio band 4.0 +/- 20% as a slope interval.
    let (lo, hi) = (3.2f64.log2(), 4.8f64.log2());

    // Macro part versus macro width along the coarsest micro step.
    let pts: Vec<(f64, f64)> = g
        .cells
        .iter()
        .filter(|c| c.row.micro_step == 0.1)
        .map(|c| (c.row.macro_step, c.row.eta_macro.abs()))
        .collect();
    assert_eq!(pts.len(), 6);
    let slope = log_log_slope(&pts);
    assert!(
        (lo..=hi).contains(&slope),
        "macro-part slope {slope:.4} outside [{lo:.3}, {hi:.3}]"
    );

    // Micro part versus micro step along the finest macro width.
    let pts: Vec<(f64, f64)> = g
        .cells
        .iter()
        .filter(|c| c.row.macro_step == 2.5e3)
        .map(|c| (c.row.micro_step, c.row.eta_micro.abs()))
        .collect();
    assert_eq!(pts.len(), 6);
    let slope = log_log_slope(&pts);
    assert!(
        (lo..=hi).contains(&slope),
        "micro-part slope {slope:.4} outside [{lo:.3}, {hi:.3}]"
    );

    // Adjoint-consistency part: higher order in the micro step. The first
    // halving along the coarsest macro width must gain at least 2^3; deeper
    // in the column the part sits at round-off scale where no order is
    // measurable.
    let mut col: Vec<(f64, f64)> = g
        .cells
        .iter()
        .filter(|c| c.row.macro_step == 1.0e5)
        .map(|c| (c.row.micro_step, c.row.eta_adjoint.abs()))
        .collect();
    col.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let gain = (col[0].1 / col[1].1).log2();
    assert!(
        gain >= 3.0,
        "adjoint-consistency part gains only 2^{gain:.2} over the first halving (need >= 2^3)"
    );
}

// ---------------------------------------------------------------------------
// Localization
// ---------------------------------------------------------------------------

#[test]
fn localization_sums_to_global_estimate() {
    for c in &grid().cells {
        let scale = c.row.eta_total.abs().max(1.0);
        assert!(
            c.localization_gap <= 1.0e-12 * scale,
            "cell (K={}, k={}): localized parts differ from the total by {:.2e}",
            c.row.macro_step,
            c.row.micro_step,
            c.localization_gap
        );
    }
    for it in &effort_study().trace.iterations {
        let by_parts: f64 = it.breakdown.eta_macro.iter().sum::<f64>()
            + it.breakdown.eta_micro.iter().sum::<f64>()
            + it.breakdown.eta_adjoint;
        let gap = (by_parts - it.breakdown.eta_total()).abs();
        assert!(
            gap <= 1.0e-12 * it.breakdown.eta_total().abs().max(1.0),
            "adaptive sweep on {} intervals: localized parts differ from the total by {gap:.2e}",
            it.mesh.interval_count()
        );
    }
}

// ---------------------------------------------------------------------------
// Duality checks
// ---------------------------------------------------------------------------

/// A system with an extra time-periodic forcing `amp * w(t)` on the fast
/// equation; all gradients coincide with the base system's.
struct Nudged<'a> {
    base: &'a dyn SlowFastSystem,
    amp: f64,
}

fn nudge_shape(t: f64) -> [f64; 2] {
    let two_pi = std::f64::consts::TAU;
    [0.3 * (two_pi * t + 0.7).sin(), 0.2 * (2.0 * two_pi * t).cos() + 0.1]
}

impl SlowFastSystem for Nudged<'_> {
    fn slow_dim(&self) -> usize {
        self.base.slow_dim()
    }
    fn fast_dim(&self) -> usize {
        self.base.fast_dim()
    }
    fn epsilon(&self) -> f64 {
        self.base.epsilon()
    }
    fn horizon(&self) -> f64 {
        self.base.horizon()
    }
    fn initial_slow(&self) -> DVector<f64> {
        self.base.initial_slow()
    }
    fn slow_rhs(&self, y: &DVector<f64>, u: &DVector<f64>, out: &mut DVector<f64>) {
        self.base.slow_rhs(y, u, out);
    }
    fn slow_rhs_grad_y(&self, y: &DVector<f64>, u: &DVector<f64>, out: &mut DMatrix<f64>) {
        self.base.slow_rhs_grad_y(y, u, out);
    }
    fn slow_rhs_grad_u(&self, y: &DVector<f64>, u: &DVector<f64>, out: &mut DMatrix<f64>) {
        self.base.slow_rhs_grad_u(y, u, out);
    }
    fn fast_rhs(&self, t: f64, y: &DVector<f64>, u: &DVector<f64>, out: &mut DVector<f64>) {
        self.base.fast_rhs(t, y, u, out);
        let w = nudge_shape(t);
        out[0] += self.amp * w[0];
        out[1] += self.amp * w[1];
    }
    fn fast_rhs_grad_y(&self, t: f64, y: &DVector<f64>, u: &DVector<f64>, out: &mut DMatrix<f64>) {
        self.base.fast_rhs_grad_y(t, y, u, out);
    }
    fn fast_rhs_grad_u(&self, t: f64, y: &DVector<f64>, u: &DVector<f64>, out: &mut DMatrix<f64>) {
        self.base.fast_rhs_grad_u(t, y, u, out);
    }
}

#[test]
fn dual_quantities_match_finite_differences() {
    let tight = OrbitOptions {
        periodicity_tol: 1.0e-12,
        max_cycles: 5000,
        ..OrbitOptions::default()
    };
    let grid_k = MicroGrid::new(0.0125).expect("micro grid");
    let delta = 1.0e-4;

    // Tangent orbits and the full transfer gradient against central
    // differences of independently converged orbits.
    let samples: [(BenchmarkId, &[f64]); 2] = [
        (BenchmarkId::Osc1, &[0.0, 0.45, 0.95, 1.08]),
        (BenchmarkId::Osc2, &[0.0, 0.2, 0.35]),
    ];
    for (id, anchors) in samples {
        let sys = make_benchmark(id, None);
        for &y in anchors {
            let anchor = DVector::from_vec(vec![y]);
            let orbit = solve_periodic(&sys, &anchor, &grid_k, &tight, None).expect("orbit");
            let tangent = solve_tangent(&sys, &orbit).expect("tangent");
            let grad = transfer_grad_full(&sys, &orbit, &tangent);

            let plus = DVector::from_vec(vec![y + delta]);
            let minus = DVector::from_vec(vec![y - delta]);
            let orbit_p = solve_periodic(&sys, &plus, &grid_k, &tight, Some(&orbit)).expect("orbit");
            let orbit_m =
                solve_periodic(&sys, &minus, &grid_k, &tight, Some(&orbit)).expect("orbit");

            let fd_grad = (transfer(&sys, &orbit_p)[0] - transfer(&sys, &orbit_m)[0]) / (2.0 * delta);
            let scale = fd_grad.abs().max(1.0);
            assert!(
                (grad[(0, 0)] - fd_grad).abs() <= 1.0e-5 * scale,
                "transfer gradient at Y={y}: analytic {:+.8e} vs differenced {fd_grad:+.8e}",
                grad[(0, 0)]
            );

            let m_count = grid_k.intervals();
            for node in [0, m_count / 4, m_count / 2, 3 * m_count / 4] {
                let fd = (orbit_p.value(node) - orbit_m.value(node)) / (2.0 * delta);
                let t = tangent.value(node).column(0).clone_owned();
                let scale = fd.norm().max(1.0);
                assert!(
                    (&t - &fd).norm() <= 1.0e-5 * scale,
                    "tangent at Y={y}, node {node}: analytic {t:?} vs differenced {fd:?}"
                );
            }
        }
    }

    // Macro adjoint: the backward recursion holds with matrices reassembled
    // from the stored gradients.
    let sys = make_benchmark(BenchmarkId::Osc1, None);
    let goal = goal0();
    let mesh = MacroMesh::uniform(sys.horizon(), 1.0e4, 0.025).expect("mesh");
    let solution = solve_macro(&sys, &mesh, &MacroOptions::default()).expect("macro solve");
    let adjoint = solve_macro_adjoint(&sys, &solution, &goal).expect("adjoint");
    let eps = sys.epsilon();
    let n_count = mesh.interval_count();
    for n in 0..n_count {
        let half = 0.5 * mesh.width(n);
        let mut lhs = adjoint.value(n).clone();
        for q in 0..2 {
            lhs -= eps * half * GAUSS_THETA[q] * (adjoint.gradient(n, q).transpose() * adjoint.value(n));
        }
        let rhs = if n + 1 == n_count {
            goal.gradient(1)
        } else {
            let half_next = 0.5 * mesh.width(n + 1);
            let mut r = adjoint.value(n + 1).clone();
            for q in 0..2 {
                r += eps
                    * half_next
                    * (1.0 - GAUSS_THETA[q])
                    * (adjoint.gradient(n + 1, q).transpose() * adjoint.value(n + 1));
            }
            r
        };
        let residual = (&lhs - &rhs).norm();
        let scale = 1.0 + adjoint.value(n).norm();
        assert!(
            residual <= 1.0e-12 * scale,
            "adjoint recursion residual {residual:.2e} on interval {n} (scale {scale:.2e})"
        );
    }

    // Micro adjoint duality: the predicted first-order response to a fast
    // forcing perturbation matches the recomputed orbit to second order in
    // the amplitude.
    let anchor = DVector::from_vec(vec![0.5]);
    let orbit = solve_periodic(&sys, &anchor, &grid_k, &tight, None).expect("orbit");
    let micro_adjoint = solve_micro_adjoint(&sys, &orbit).expect("micro adjoint");
    let base_f = transfer(&sys, &orbit)[0];

    let mut predicted_unit = 0.0;
    let half_k = 0.5 * grid_k.step();
    for m in 0..grid_k.intervals() {
        let chi = gauss_points(grid_k.node(m), grid_k.node(m + 1));
        let z = micro_adjoint.value(m);
        for &t in &chi {
            let w = nudge_shape(t);
            predicted_unit += half_k * (z[(0, 0)] * w[0] + z[(1, 0)] * w[1]);
        }
    }

    let response_error = |amp: f64| -> f64 {
        let nudged = Nudged { base: &sys, amp };
        let perturbed =
            solve_periodic(&nudged, &anchor, &grid_k, &tight, Some(&orbit)).expect("orbit");
        let measured = transfer(&sys, &perturbed)[0] - base_f;
        (measured - amp * predicted_unit).abs()
    };
    let err_full = response_error(1.0e-3);
    let err_half = response_error(5.0e-4);
    assert!(
        err_half <= 0.3 * err_full + 1.0e-13,
        "duality defect fails to contract quadratically: {err_full:.3e} -> {err_half:.3e}"
    );
}

// ---------------------------------------------------------------------------
// Adaptive efficiency
// ---------------------------------------------------------------------------

#[test]
fn adaptive_loop_beats_uniform_refinement() {
    let study = effort_study();
    let reference = osc2_reference().ex.limit;

    assert_eq!(
        study.trace.stop,
        StopReason::TargetReached,
        "adaptive loop stopped without reaching its target: {:?}",
        study.trace.stop
    );
    let last = study.trace.last();
    let err = last.goal_value - reference;
    assert!(
        err.abs() <= ADAPT_TARGET,
        "final adaptive error {err:+.3e} above target {ADAPT_TARGET:.1e}"
    );

    let entry = study.trace.iterations.iter().position(|it| {
        let ratio = it.breakdown.eta_micro_total().abs() / it.breakdown.eta_macro_total().abs();
        ((1.0 / 3.0)..=3.0).contains(&ratio)
    });
    assert!(
        entry.is_some_and(|i| i < 8),
        "micro/macro balance never entered [1/3, 3] within 8 sweeps: {entry:?}"
    );

    let competitor = study
        .uniform
        .iter()
        .find(|u| u.error.abs() <= ADAPT_TARGET)
        .expect("a uniform mesh meeting the error target");
    let ratio = last.effort / competitor.effort;
    assert!(
        ratio <= 0.3,
        "adaptive effort {:.0} is {ratio:.3} of the uniform effort {:.0} (need <= 0.3); \
         uniform competitor K={}, k={}",
        last.effort,
        competitor.effort,
        competitor.macro_step,
        competitor.micro_step
    );
}

// ---------------------------------------------------------------------------
// Periodic-orbit contract
// ---------------------------------------------------------------------------

#[test]
fn periodic_orbits_meet_their_contract() {
    let defect_tol = OrbitOptions::default().periodicity_tol;
    let cycle_cap = OrbitOptions::default().max_cycles;
    assert_eq!(defect_tol, 1.0e-9);
    assert_eq!(cycle_cap, 200);

    for c in &grid().cells {
        assert!(
            c.max_defect <= defect_tol,
            "grid cell (K={}, k={}): worst defect {:.2e}",
            c.row.macro_step,
            c.row.micro_step,
            c.max_defect
        );
        assert!(
            c.max_cycles <= cycle_cap,
            "grid cell (K={}, k={}): worst cycle count {}",
            c.row.macro_step,
            c.row.micro_step,
            c.max_cycles
        );
    }

    let study = effort_study();
    assert!(
        study.final_defect <= defect_tol,
        "adaptive final mesh: worst defect {:.2e}",
        study.final_defect
    );
    assert!(study.final_cycles <= cycle_cap);
    for u in &study.uniform {
        assert!(
            u.max_defect <= defect_tol && u.max_cycles <= cycle_cap,
            "uniform run (K={}, k={}): defect {:.2e}, cycles {}",
            u.macro_step,
            u.micro_step,
            u.max_defect,
            u.max_cycles
        );
    }
}

// ---------------------------------------------------------------------------
// Data export
// ---------------------------------------------------------------------------

fn assert_csv_shape(bytes: &[u8], header: &str, rows: usize) {
    let text = std::str::from_utf8(bytes).expect("CSV is valid UTF-8");
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.first().copied(), Some(header), "header row");
    assert_eq!(lines.len(), rows + 1, "one line per record plus the header");
    let fields = header.split(',').count();
    for line in &lines[1..] {
        assert_eq!(line.split(',').count(), fields, "field count in {line:?}");
        for field in line.split(',') {
            // Numeric fields start with a digit or a sign; labels don't.
            if field.starts_with(|ch: char| ch.is_ascii_digit() || ch == '-') {
                let value: f64 = field.parse().expect("numeric field parses as f64");
                assert!(value.is_finite(), "non-finite value in {line:?}");
            }
            assert!(!field.contains(';'), "no semicolons in fields");
        }
    }
}

#[test]
fn figure_traces_export_as_csv() {
    let g = grid();
    let study = effort_study();
    let r1 = osc1_reference();

    // Uniform-study summary table.
    let rows: Vec<SummaryRow> = g.cells.iter().map(|c| c.row.clone()).collect();
    let mut summary = Vec::new();
    write_summary_csv(&mut summary, &rows).expect("summary CSV");
    assert_csv_shape(&summary, "k,K,J,err,eta,eta_macro,eta_micro,eta_adjoint,eff", 36);

    // Resolved-reference table.
    let mut reference = Vec::new();
    write_reference_csv(&mut reference, &r1.entries, Some(&r1.ex)).expect("reference CSV");
    assert_csv_shape(&reference, "k,J,order,limit", 3);

    // Adaptive trace, per-interval indicators, and the refined mesh.
    let mut trace = Vec::new();
    write_adapt_trace_csv(&mut trace, &study.trace).expect("trace CSV");
    assert_csv_shape(
        &trace,
        "l,N,J,eta_total,eta_macro,eta_micro,effort,cumulative_effort",
        study.trace.iterations.len(),
    );

    let last = study.trace.last();
    let mut breakdown = Vec::new();
    write_breakdown_csv(&mut breakdown, &last.mesh, &last.breakdown).expect("breakdown CSV");
    assert_csv_shape(
        &breakdown,
        "n,t_start,t_end,micro_step,eta_macro,eta_micro",
        last.mesh.interval_count(),
    );

    let mut mesh = Vec::new();
    write_mesh_csv(&mut mesh, &last.mesh).expect("mesh CSV");
    assert_csv_shape(&mesh, "n,t_start,t_end,micro_step", last.mesh.interval_count());

    // Effort comparison table.
    let effort_rows: Vec<EffortRow> = study
        .uniform
        .iter()
        .map(|u| EffortRow {
            approach: "uniform".into(),
            error: Some(u.error),
            micro_step: u.micro_step,
            macro_step: Some(u.macro_step),
            steps: u.effort,
        })
        .chain(std::iter::once(EffortRow {
            approach: "adaptive".into(),
            error: Some(last.goal_value - osc2_reference().ex.limit),
            micro_step: last.mesh.micro_steps().iter().copied().fold(f64::INFINITY, f64::min),
            macro_step: Some(
                (0..last.mesh.interval_count())
                    .map(|n| last.mesh.width(n))
                    .fold(f64::INFINITY, f64::min),
            ),
            steps: last.effort,
        }))
        .collect();
    let mut effort = Vec::new();
    write_effort_csv(&mut effort, &effort_rows).expect("effort CSV");
    assert_csv_shape(&effort, "approach,error,k,K,steps", effort_rows.len());

    // Serialization is deterministic: a second pass yields identical bytes.
    let mut summary2 = Vec::new();
    write_summary_csv(&mut summary2, &rows).expect("summary CSV");
    assert_eq!(summary, summary2, "summary serialization is byte-stable");
    let mut trace2 = Vec::new();
    write_adapt_trace_csv(&mut trace2, &study.trace).expect("trace CSV");
    assert_eq!(trace, trace2, "trace serialization is byte-stable");
}
