//! Macro time stepping for the averaged slow equation: continuous
//! piecewise-linear trial functions, piecewise-constant tests, and the summed
//! two-point Gauss rule, with the averaged right-hand side supplied by
//! periodic micro solves at every macro quadrature point.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::functions::PiecewiseLinearFn;
use crate::linalg::solve_in_place;
use crate::mesh::{MacroMesh, MicroGrid};
use crate::micro::{
    solve_periodic, solve_tangent, transfer, transfer_grad_full, OrbitOptions, PeriodicOrbit,
};
use crate::quadrature::GAUSS_THETA;
use crate::systems::{GoalFunctional, SlowFastSystem};

/// Options for the macro solve and its inner Newton iteration.
#[derive(Debug, Clone)]
pub struct MacroOptions {
    /// Relative tolerance on the macro step residual.
    pub newton_tol: f64,
    /// Cap on Newton iterations per macro step.
    pub max_newton: usize,
    /// Options forwarded to every periodic micro solve.
    pub orbit: OrbitOptions,
}

impl Default for MacroOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-12,
            max_newton: 60,
            orbit: OrbitOptions::default(),
        }
    }
}

/// Outcome of one macro step.
#[derive(Debug, Clone)]
pub struct MacroStepResult {
    /// Slow state at the right end of the interval.
    pub y_next: DVector<f64>,
    /// Converged periodic orbits at the two Gauss-point states.
    pub orbits: [PeriodicOrbit; 2],
    /// Averaged right-hand side values at the two Gauss-point states.
    pub transfers: [DVector<f64>; 2],
    /// Newton iterations used.
    pub iterations: usize,
    /// Final residual norm.
    pub residual: f64,
    /// Periodic solves performed across all Newton iterations.
    pub orbit_solves: usize,
    /// Micro steps marched across all cycling sweeps of those solves.
    pub micro_steps: u64,
    /// Worst cycling count among those solves.
    pub max_cycles: usize,
    /// Worst accepted period defect among those solves.
    pub max_defect: f64,
}

/// Newton iterations without a residual halving before the stagnation test.
const STALL_WINDOW: usize = 6;

/// Safety factor mapping accepted orbit defects to the residual noise floor;
/// covers cycling contraction rates up to 0.99.
const STALL_AMPLIFICATION: f64 = 100.0;

/// Snapshot of the best Newton iterate seen so far.
struct BestIterate {
    residual: f64,
    y: DVector<f64>,
    orbits: [PeriodicOrbit; 2],
    transfers: [DVector<f64>; 2],
}

/// Per-interval record kept by [`solve_macro`].
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Slow states at the two Gauss points of the interval.
    pub anchors: [DVector<f64>; 2],
    /// Averaged right-hand side at the two Gauss points.
    pub transfers: [DVector<f64>; 2],
    /// Newton iterations used by the step.
    pub newton_iterations: usize,
    /// Final Newton residual norm.
    pub newton_residual: f64,
}

/// One implicit macro step of width `width`: solve
///
/// ```text
///     Y_n = Y_prev + eps * (K/2) * [ F_k(Y(chi_1)) + F_k(Y(chi_2)) ],
///     Y(chi_q) = (1 - theta_q) Y_prev + theta_q Y_n,
/// ```
///
/// by a Newton iteration whose matrix uses the full transfer gradient,
/// differentiated through the periodic orbits via their tangent problems.
/// (The cheaper partial gradient is not contractive on stiff reaction
/// profiles, where the anchor sensitivity of the orbit dominates.) Every
/// residual evaluation solves the two periodic micro problems at the current
/// Gauss-point states, warm-started from the previous iteration (or from the
/// orbits handed in by the caller).
///
/// The residual cannot drop below the noise the micro cycling tolerance
/// injects into the averaged right-hand side, roughly
/// `eps * (K/2) * defect / (1 - cycling rate)`. When the iteration stops
/// making progress at a level consistent with that floor, the best iterate is
/// accepted; stagnating anywhere above it still fails the step.
#[allow(clippy::too_many_arguments)]
pub fn macro_step(
    system: &dyn SlowFastSystem,
    interval_index: usize,
    width: f64,
    grid: &MicroGrid,
    y_prev: &DVector<f64>,
    options: &MacroOptions,
    warm: [Option<&PeriodicOrbit>; 2],
) -> Result<MacroStepResult> {
    let c = system.slow_dim();
    let eps = system.epsilon();
    let half_width = 0.5 * width;

    let mut y_next = y_prev.clone();
    let mut anchors = [DVector::zeros(c), DVector::zeros(c)];
    let mut orbits: [Option<PeriodicOrbit>; 2] = [None, None];
    let mut transfers = [DVector::zeros(c), DVector::zeros(c)];
    let mut residual = DVector::zeros(c);
    let mut jac = DMatrix::zeros(c, c);
    let mut lin_a = DMatrix::zeros(c, c);
    let mut lin_b = DVector::zeros(c);
    let mut residuals = Vec::new();

    let mut iterations = 0;
    let mut orbit_solves = 0usize;
    let mut micro_steps = 0u64;
    let mut max_cycles = 0usize;
    let mut max_defect = 0.0f64;
    let mut best: Option<BestIterate> = None;
    let mut since_improvement = 0usize;
    loop {
        // Residual at the current iterate; the micro solves at the two
        // Gauss-point states are the expensive part.
        residual.copy_from(&y_next);
        residual -= y_prev;
        for q in 0..2 {
            let theta = GAUSS_THETA[q];
            anchors[q].copy_from(y_prev);
            anchors[q] *= 1.0 - theta;
            anchors[q].axpy(theta, &y_next, 1.0);
            let warm_ref = orbits[q].as_ref().or(warm[q]);
            let orbit = solve_periodic(system, &anchors[q], grid, &options.orbit, warm_ref)?;
            orbit_solves += 1;
            micro_steps += orbit.cycles() as u64 * grid.intervals() as u64;
            max_cycles = max_cycles.max(orbit.cycles());
            max_defect = max_defect.max(orbit.defect());
            transfers[q] = transfer(system, &orbit);
            residual.axpy(-eps * half_width, &transfers[q], 1.0);
            orbits[q] = Some(orbit);
        }
        let res_norm = residual.norm();
        residuals.push(res_norm);
        if res_norm <= options.newton_tol * (1.0 + y_next.norm()) {
            return Ok(MacroStepResult {
                y_next,
                orbits: [orbits[0].take().unwrap(), orbits[1].take().unwrap()],
                transfers,
                iterations,
                residual: res_norm,
                orbit_solves,
                micro_steps,
                max_cycles,
                max_defect,
            });
        }

        // Track the best iterate; halving the best residual counts as
        // progress for the stagnation test.
        let progressed = best.as_ref().is_none_or(|b| res_norm < 0.5 * b.residual);
        if best.as_ref().is_none_or(|b| res_norm < b.residual) {
            best = Some(BestIterate {
                residual: res_norm,
                y: y_next.clone(),
                orbits: [orbits[0].clone().unwrap(), orbits[1].clone().unwrap()],
                transfers: transfers.clone(),
            });
        }
        since_improvement = if progressed { 0 } else { since_improvement + 1 };
        if since_improvement >= STALL_WINDOW || iterations >= options.max_newton {
            let floor = STALL_AMPLIFICATION
                * eps
                * half_width
                * orbits.iter().map(|o| o.as_ref().unwrap().defect()).sum::<f64>();
            if let Some(b) = best.take() {
                if b.residual <= floor.max(options.newton_tol * (1.0 + b.y.norm())) {
                    return Ok(MacroStepResult {
                        y_next: b.y,
                        orbits: b.orbits,
                        transfers: b.transfers,
                        iterations,
                        residual: b.residual,
                        orbit_solves,
                        micro_steps,
                        max_cycles,
                        max_defect,
                    });
                }
            }
            return Err(Error::NewtonDiverged { interval: interval_index, residuals });
        }

        jac.fill(0.0);
        jac.fill_diagonal(1.0);
        for q in 0..2 {
            let orbit = orbits[q].as_ref().unwrap();
            let tangent = solve_tangent(system, orbit)?;
            let grad = transfer_grad_full(system, orbit, &tangent);
            jac.zip_apply(&grad, |v, g| *v -= eps * half_width * GAUSS_THETA[q] * g);
        }
        lin_a.copy_from(&jac);
        lin_b.copy_from(&residual);
        solve_in_place(&mut lin_a, &mut lin_b)?;
        y_next -= &lin_b;
        iterations += 1;
    }
}

/// The full multiscale solution on a macro mesh.
#[derive(Debug, Clone)]
pub struct MacroSolution {
    mesh: MacroMesh,
    trajectory: PiecewiseLinearFn,
    steps: Vec<StepRecord>,
    orbits: Vec<[PeriodicOrbit; 2]>,
    orbit_options: OrbitOptions,
    /// Number of periodic micro solves performed.
    pub orbit_solves: usize,
    /// Total micro steps marched across all cycling sweeps.
    pub micro_steps: u64,
    /// Worst period defect among the accepted orbits.
    pub max_defect: f64,
    /// Worst cycling count among the accepted orbits.
    pub max_cycles: usize,
}

impl MacroSolution {
    pub fn mesh(&self) -> &MacroMesh {
        &self.mesh
    }

    /// Continuous piecewise-linear slow trajectory.
    pub fn trajectory(&self) -> &PiecewiseLinearFn {
        &self.trajectory
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    /// Converged orbits at the two Gauss points of each interval.
    pub fn orbits(&self) -> &[[PeriodicOrbit; 2]] {
        &self.orbits
    }

    /// Options the periodic micro solves were run with (reused by the
    /// estimator for its own nested solves).
    pub fn orbit_options(&self) -> &OrbitOptions {
        &self.orbit_options
    }

    pub fn terminal(&self) -> &DVector<f64> {
        self.trajectory.value(self.mesh.interval_count())
    }

    pub fn goal(&self, goal: &GoalFunctional) -> f64 {
        goal.evaluate(self.terminal())
    }
}

/// Marches the averaged slow equation across the whole mesh. Orbits are
/// warm-started across steps (slot-wise: each Gauss slot reuses the orbit
/// from the same slot of the previous interval).
pub fn solve_macro(
    system: &dyn SlowFastSystem,
    mesh: &MacroMesh,
    options: &MacroOptions,
) -> Result<MacroSolution> {
    mesh.validate()?;
    if system.initial_slow().len() != system.slow_dim() {
        return Err(Error::Structure("initial state dimension mismatch".into()));
    }

    let n_count = mesh.interval_count();
    let mut values = Vec::with_capacity(n_count + 1);
    values.push(system.initial_slow());
    let mut steps = Vec::with_capacity(n_count);
    let mut orbits: Vec<[PeriodicOrbit; 2]> = Vec::with_capacity(n_count);
    let mut orbit_solves = 0usize;
    let mut micro_steps = 0u64;
    let mut max_defect = 0.0f64;
    let mut max_cycles = 0usize;

    for n in 0..n_count {
        let grid = mesh.micro_grid(n);
        let warm = match orbits.last() {
            Some([a, b]) => [Some(a), Some(b)],
            None => [None, None],
        };
        let result = macro_step(
            system,
            n,
            mesh.width(n),
            &grid,
            &values[n],
            options,
            warm,
        )?;
        orbit_solves += result.orbit_solves;
        micro_steps += result.micro_steps;
        max_defect = max_defect.max(result.max_defect);
        max_cycles = max_cycles.max(result.max_cycles);
        let theta = GAUSS_THETA;
        let mut anchors = [DVector::zeros(values[n].len()), DVector::zeros(values[n].len())];
        for q in 0..2 {
            anchors[q].copy_from(&values[n]);
            anchors[q] *= 1.0 - theta[q];
            anchors[q].axpy(theta[q], &result.y_next, 1.0);
        }
        steps.push(StepRecord {
            anchors,
            transfers: result.transfers.clone(),
            newton_iterations: result.iterations,
            newton_residual: result.residual,
        });
        orbits.push(result.orbits);
        values.push(result.y_next);
    }

    let trajectory = PiecewiseLinearFn::new(mesh.nodes().to_vec(), values)?;
    Ok(MacroSolution {
        mesh: mesh.clone(),
        trajectory,
        steps,
        orbits,
        orbit_options: options.orbit.clone(),
        orbit_solves,
        micro_steps,
        max_defect,
        max_cycles,
    })
}
