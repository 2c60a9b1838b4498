//! Averaged multiscale time stepping for slow/fast ODE systems.
//!
//! This crate solves two-scale initial value problems
//!
//! ```text
//!     y'(t) = eps * f(y(t), u(t)),      y(0) = y0,      t in (0, T],
//!     u'(t) = g(t, y(t), u(t)),
//! ```
//!
//! where the fast variable `u` relaxes onto a 1-periodic limit cycle on the
//! fast time scale while the slow variable `y` drifts over a horizon
//! `T = O(1/eps)`. Instead of resolving every fast oscillation the solver
//! advances the averaged slow equation
//!
//! ```text
//!     Y'(t) = eps * F(Y(t)),      F(Y) = \int_0^1 f(Y, u_Y(s)) ds,
//! ```
//!
//! where `u_Y` is the periodic response of the fast equation with the slow
//! state frozen at `Y`. Both scales are discretized with a piecewise-linear
//! Petrov-Galerkin scheme (two-point Gauss quadrature in every step), the
//! periodic micro problems are found by cycling, and a dual-weighted-residual
//! estimator splits the error in a goal functional `J(Y) = Y_i(T)` into
//! per-interval macro and micro contributions that drive mesh adaptivity.
//!
//! Modules:
//! - [`systems`]: problem definitions, benchmark oscillators, assumption checks
//! - [`mesh`]: macro meshes with per-interval micro steps, refinement
//! - [`functions`]: piecewise polynomial trajectories and patch reconstructions
//! - [`quadrature`]: the two-point Gauss rule used by every integral
//! - [`micro`]: periodic micro solves, averaged transfer and its derivatives
//! - [`macroscale`]: the averaged slow march
//! - [`adjoint`]: the discrete adjoint of the slow march
//! - [`estimator`]: the error estimator and effort accounting
//! - [`adaptivity`]: the estimator-driven refinement loop
//! - [`reference`]: brute-force resolved solves and Richardson extrapolation
//! - [`report`]: CSV serialization of every result object

pub mod adaptivity;
pub mod adjoint;
pub mod error;
pub mod estimator;
pub mod functions;
pub mod linalg;
pub mod macroscale;
pub mod mesh;
pub mod micro;
pub mod quadrature;
pub mod reference;
pub mod report;
pub mod systems;

pub use adaptivity::{
    adapt_loop, adapt_step, mark_intervals, refine_by_decisions, AdaptConfig, AdaptIteration,
    AdaptTrace, RefineDecision, StopReason,
};
pub use adjoint::{solve_macro_adjoint, MacroAdjoint};
pub use error::{Error, Result};
pub use estimator::{
    effort_steps, estimate, estimate_adjoint_conformity, total_effort, EstimatorBreakdown,
    ADJOINT_EFFORT_FACTOR, CYCLE_EFFORT_FACTOR,
};
pub use functions::{PatchLinearFn, PatchQuadraticFn, PiecewiseConstantFn, PiecewiseLinearFn};
pub use macroscale::{macro_step, solve_macro, MacroOptions, MacroSolution, StepRecord};
pub use mesh::{MacroMesh, MicroGrid, RefineMode};
pub use micro::{
    eta_pi, eta_pi_for_orbit, eta_pi_nested, solve_micro_adjoint, solve_periodic, solve_tangent,
    transfer, transfer_grad_full, transfer_grad_partial, MicroAdjoint, OrbitOptions, PeriodicOrbit,
    TangentOrbit,
};
pub use reference::{extrapolate, solve_resolved, ExtrapolationResult, ResolvedOptions, ResolvedRun};
pub use systems::{
    check_assumptions, make_benchmark, AssumptionReport, BenchmarkId, DampingVariant, FnSystem,
    GoalFunctional, Oscillator, SlowFastSystem,
};
