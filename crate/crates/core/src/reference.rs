//! Resolved reference solver: trapezoidal time stepping of the coupled
//! slow/fast system over the whole horizon, with the fast state pre-cycled
//! onto its periodic orbit before the march, and Richardson extrapolation of
//! goal values across step halvings.

use crate::error::{Error, Result};
use crate::linalg::solve_in_place;
use crate::systems::{GoalFunctional, SlowFastSystem};
use nalgebra::{DMatrix, DVector};

/// Options for the resolved solve.
#[derive(Debug, Clone)]
pub struct ResolvedOptions {
    /// Relative Newton tolerance per trapezoidal step.
    pub newton_tol: f64,
    /// Newton iteration cap per step.
    pub max_newton: usize,
    /// Periodicity defect tolerance for the initial fast pre-cycling.
    pub precycle_tol: f64,
    /// Cap on pre-cycling periods.
    pub max_precycles: usize,
}

impl Default for ResolvedOptions {
    fn default() -> Self {
        Self { newton_tol: 1.0e-12, max_newton: 12, precycle_tol: 1.0e-12, max_precycles: 5000 }
    }
}

/// Outcome of a resolved solve.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    /// Step size used.
    pub step: f64,
    /// Number of trapezoidal steps over the horizon (pre-cycling excluded).
    pub steps: u64,
    /// Periods marched while locking the fast initial state.
    pub precycles: usize,
    /// Final periodicity defect of the pre-cycling.
    pub precycle_defect: f64,
    /// Slow state at the final time.
    pub terminal_slow: DVector<f64>,
    /// Fast state at the final time.
    pub terminal_fast: DVector<f64>,
}

impl ResolvedRun {
    /// Evaluates a goal functional at the terminal slow state.
    pub fn goal(&self, goal: &GoalFunctional) -> f64 {
        goal.evaluate(&self.terminal_slow)
    }
}

/// Preallocated buffers for the coupled trapezoidal step; nothing in the
/// stepping loop touches the heap.
struct CoupledWork {
    y1: DVector<f64>,
    u1: DVector<f64>,
    f_old: DVector<f64>,
    g_old: DVector<f64>,
    f_new: DVector<f64>,
    g_new: DVector<f64>,
    fy: DMatrix<f64>,
    fu: DMatrix<f64>,
    gy: DMatrix<f64>,
    gu: DMatrix<f64>,
    jac: DMatrix<f64>,
    jac_work: DMatrix<f64>,
    resid: DVector<f64>,
}

impl CoupledWork {
    fn new(c: usize, d: usize) -> Self {
        let n = c + d;
        Self {
            y1: DVector::zeros(c),
            u1: DVector::zeros(d),
            f_old: DVector::zeros(c),
            g_old: DVector::zeros(d),
            f_new: DVector::zeros(c),
            g_new: DVector::zeros(d),
            fy: DMatrix::zeros(c, c),
            fu: DMatrix::zeros(c, d),
            gy: DMatrix::zeros(d, c),
            gu: DMatrix::zeros(d, d),
            jac: DMatrix::zeros(n, n),
            jac_work: DMatrix::zeros(n, n),
            resid: DVector::zeros(n),
        }
    }
}

/// One trapezoidal step of the coupled system from `(t0, y0, u0)` to
/// `t0 + k`, written into `w.y1`/`w.u1`. On entry `w.f_old`/`w.g_old` must
/// hold the right-hand sides at `(t0, y0, u0)`; on success `w.f_new`/`w.g_new`
/// hold them at the accepted state, so the caller can roll buffers forward.
/// `eps` scales the slow equation; passing zero freezes the slow state, which
/// is exactly the pre-cycling problem.
fn coupled_step(
    system: &dyn SlowFastSystem,
    t0: f64,
    k: f64,
    eps: f64,
    y0: &DVector<f64>,
    u0: &DVector<f64>,
    w: &mut CoupledWork,
    options: &ResolvedOptions,
) -> Result<()> {
    let c = y0.len();
    let d = u0.len();
    let t1 = t0 + k;
    let half = 0.5 * k;

    // Explicit predictor.
    w.y1.copy_from(y0);
    w.y1.axpy(k * eps, &w.f_old, 1.0);
    w.u1.copy_from(u0);
    w.u1.axpy(k, &w.g_old, 1.0);

    // Simplified Newton: one Jacobian per step, evaluated at the predictor.
    system.slow_rhs_grad_y(&w.y1, &w.u1, &mut w.fy);
    system.slow_rhs_grad_u(&w.y1, &w.u1, &mut w.fu);
    system.fast_rhs_grad_y(t1, &w.y1, &w.u1, &mut w.gy);
    system.fast_rhs_grad_u(t1, &w.y1, &w.u1, &mut w.gu);
    w.jac.fill(0.0);
    for i in 0..c {
        w.jac[(i, i)] = 1.0;
        for j in 0..c {
            w.jac[(i, j)] -= half * eps * w.fy[(i, j)];
        }
        for j in 0..d {
            w.jac[(i, c + j)] = -half * eps * w.fu[(i, j)];
        }
    }
    for i in 0..d {
        w.jac[(c + i, c + i)] += 1.0;
        for j in 0..c {
            w.jac[(c + i, j)] = -half * w.gy[(i, j)];
        }
        for j in 0..d {
            w.jac[(c + i, c + j)] -= half * w.gu[(i, j)];
        }
    }

    let scale = 1.0 + y0.norm() + u0.norm();
    let mut last_residual = f64::INFINITY;
    for _ in 0..options.max_newton {
        system.slow_rhs(&w.y1, &w.u1, &mut w.f_new);
        system.fast_rhs(t1, &w.y1, &w.u1, &mut w.g_new);
        for i in 0..c {
            w.resid[i] = w.y1[i] - y0[i] - half * eps * (w.f_old[i] + w.f_new[i]);
        }
        for i in 0..d {
            w.resid[c + i] = w.u1[i] - u0[i] - half * (w.g_old[i] + w.g_new[i]);
        }
        last_residual = w.resid.norm();
        if last_residual <= options.newton_tol * scale {
            return Ok(());
        }
        w.jac_work.copy_from(&w.jac);
        solve_in_place(&mut w.jac_work, &mut w.resid)?;
        for i in 0..c {
            w.y1[i] -= w.resid[i];
        }
        for i in 0..d {
            w.u1[i] -= w.resid[c + i];
        }
    }
    Err(Error::MicroStepDiverged { time: t0, residual: last_residual })
}

fn integral_count(len: f64, step: f64, what: &str) -> Result<u64> {
    let raw = len / step;
    let rounded = raw.round();
    if rounded < 1.0 || (raw - rounded).abs() > 1.0e-8 * rounded.max(1.0) {
        return Err(Error::Config(format!(
            "step {step} does not divide the {what} {len} into whole steps"
        )));
    }
    Ok(rounded as u64)
}

/// Solves the fully resolved coupled system over the horizon with the
/// trapezoidal method. The fast state is first relaxed onto its periodic
/// orbit (slow state frozen) by marching whole periods until the periodicity
/// defect drops below `options.precycle_tol`.
pub fn solve_resolved(
    system: &dyn SlowFastSystem,
    step: f64,
    options: &ResolvedOptions,
) -> Result<ResolvedRun> {
    let c = system.slow_dim();
    let d = system.fast_dim();
    let horizon = system.horizon();
    let eps = system.epsilon();
    let steps = integral_count(horizon, step, "horizon")?;
    let per_period = integral_count(1.0, step, "unit period")?;

    let mut y = system.initial_slow();
    if y.len() != c {
        return Err(Error::Usage(format!(
            "initial slow state has dimension {}, system declares {c}",
            y.len()
        )));
    }
    let mut u = DVector::zeros(d);
    let mut w = CoupledWork::new(c, d);
    let mut u_start = DVector::zeros(d);

    // Pre-cycle: march periods with the slow equation switched off until the
    // fast state returns to itself. The periodic forcing lets the time
    // argument roll on across cycles.
    system.slow_rhs(&y, &u, &mut w.f_old);
    system.fast_rhs(0.0, &y, &u, &mut w.g_old);
    let mut precycles = 0;
    let mut precycle_defect = f64::INFINITY;
    while precycle_defect > options.precycle_tol {
        if precycles >= options.max_precycles {
            return Err(Error::CyclingDiverged {
                defect: precycle_defect,
                cycles: precycles,
                tolerance: options.precycle_tol,
            });
        }
        u_start.copy_from(&u);
        for m in 0..per_period {
            let t0 = m as f64 * step;
            coupled_step(system, t0, step, 0.0, &y, &u, &mut w, options)?;
            std::mem::swap(&mut u, &mut w.u1);
            std::mem::swap(&mut w.f_old, &mut w.f_new);
            std::mem::swap(&mut w.g_old, &mut w.g_new);
        }
        precycles += 1;
        precycle_defect = (&u - &u_start).norm();
    }

    // Main march over the horizon from the locked periodic state.
    system.slow_rhs(&y, &u, &mut w.f_old);
    system.fast_rhs(0.0, &y, &u, &mut w.g_old);
    for n in 0..steps {
        let t0 = n as f64 * step;
        coupled_step(system, t0, step, eps, &y, &u, &mut w, options)?;
        std::mem::swap(&mut y, &mut w.y1);
        std::mem::swap(&mut u, &mut w.u1);
        std::mem::swap(&mut w.f_old, &mut w.f_new);
        std::mem::swap(&mut w.g_old, &mut w.g_new);
    }

    Ok(ResolvedRun {
        step,
        steps,
        precycles,
        precycle_defect,
        terminal_slow: y,
        terminal_fast: u,
    })
}

/// Richardson extrapolation from goal values at steps `k`, `k/2`, `k/4`.
#[derive(Debug, Clone, Copy)]
pub struct ExtrapolationResult {
    /// Observed convergence order `log2(d1/d2)`.
    pub order: f64,
    /// Extrapolated limit value.
    pub limit: f64,
    /// First difference `j2 - j1`.
    pub d1: f64,
    /// Second difference `j3 - j2`.
    pub d2: f64,
    /// Whether the differences contract with matching signs.
    pub reliable: bool,
}

/// Extrapolates three goal values computed at consecutively halved steps.
pub fn extrapolate(values: [f64; 3]) -> ExtrapolationResult {
    let [j1, j2, j3] = values;
    let d1 = j2 - j1;
    let d2 = j3 - j2;
    let reliable = d1 * d2 > 0.0 && d2.abs() < d1.abs();
    let order = if d2 != 0.0 && d1 / d2 > 0.0 { (d1 / d2).log2() } else { f64::NAN };
    let limit = if order.is_finite() && order > 0.0 {
        j3 + d2 / ((2.0_f64).powf(order) - 1.0)
    } else {
        j3
    };
    ExtrapolationResult { order, limit, d1, d2, reliable }
}
