//! Goal-driven mesh adaptation: interval marking from the dual-weighted
//! indicators and the solve–estimate–mark–refine loop.

use crate::adjoint::solve_macro_adjoint;
use crate::error::Result;
use crate::estimator::{estimate, total_effort, EstimatorBreakdown};
use crate::macroscale::{solve_macro, MacroOptions};
use crate::mesh::MacroMesh;
use crate::systems::{GoalFunctional, SlowFastSystem};

/// What to do with one macro interval in a refinement pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineDecision {
    /// Below threshold: leave the interval alone.
    Keep,
    /// Macro indicator dominates: split the interval in time.
    Macro,
    /// Micro indicator dominates: halve the interval's micro step.
    Micro,
    /// Neither dominates: do both.
    Both,
}

/// Configuration of the adaptive loop.
#[derive(Debug, Clone)]
pub struct AdaptConfig {
    /// Dominance factor: an interval refines when its combined indicator
    /// exceeds `beta` times the mesh average, and a component is refined
    /// alone only when it exceeds `beta` times the other.
    pub beta: f64,
    /// Cap on solve–estimate–refine sweeps.
    pub max_iterations: usize,
    /// Optional stopping tolerance on `|eta_total|`.
    pub target_error: Option<f64>,
    /// Options for the forward solves.
    pub macro_options: MacroOptions,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            beta: 1.2,
            max_iterations: 12,
            target_error: None,
            macro_options: MacroOptions::default(),
        }
    }
}

/// Why the adaptive loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// `|eta_total|` reached the requested target.
    TargetReached,
    /// No interval exceeded the marking threshold.
    Converged,
    /// The iteration cap was hit.
    MaxIterations,
}

/// One solve–estimate–mark sweep.
#[derive(Debug, Clone)]
pub struct AdaptIteration {
    /// Mesh used in this sweep.
    pub mesh: MacroMesh,
    /// Goal value of the forward solve.
    pub goal_value: f64,
    /// Interval-wise indicators of this sweep.
    pub breakdown: EstimatorBreakdown,
    /// Marking decisions derived from the indicators.
    pub decisions: Vec<RefineDecision>,
    /// Nominal effort of the sweep.
    pub effort: f64,
}

/// Record of a full adaptive run.
#[derive(Debug, Clone)]
pub struct AdaptTrace {
    pub iterations: Vec<AdaptIteration>,
    /// Mesh produced by the last applied refinement (the mesh one *would*
    /// solve on next).
    pub final_mesh: MacroMesh,
    /// Sum of the per-sweep efforts.
    pub cumulative_effort: f64,
    pub stop: StopReason,
}

impl AdaptTrace {
    /// Indicators of the last completed sweep.
    pub fn last(&self) -> &AdaptIteration {
        self.iterations.last().expect("trace holds at least one iteration")
    }
}

/// Applies the marking rule: interval `n` refines when
/// `|eta_EG^n| + |eta_EF^n| > beta * mean`, choosing the component whose
/// indicator dominates the other by the same factor (both otherwise).
pub fn mark_intervals(breakdown: &EstimatorBreakdown, beta: f64) -> Vec<RefineDecision> {
    let n = breakdown.interval_count();
    let mean = breakdown
        .eta_macro
        .iter()
        .zip(&breakdown.eta_micro)
        .map(|(a, b)| a.abs() + b.abs())
        .sum::<f64>()
        / n as f64;
    breakdown
        .eta_macro
        .iter()
        .zip(&breakdown.eta_micro)
        .map(|(eg, ef)| {
            let (eg, ef) = (eg.abs(), ef.abs());
            if eg + ef <= beta * mean || eg + ef == 0.0 {
                RefineDecision::Keep
            } else if eg > beta * ef {
                RefineDecision::Macro
            } else if ef > beta * eg {
                RefineDecision::Micro
            } else {
                RefineDecision::Both
            }
        })
        .collect()
}

/// Applies a decision vector to the mesh. Macro splits propagate to the
/// reconstruction-patch partner; micro halvings stay local.
pub fn refine_by_decisions(mesh: &MacroMesh, decisions: &[RefineDecision]) -> Result<MacroMesh> {
    let macro_flags: Vec<bool> = decisions
        .iter()
        .map(|d| matches!(d, RefineDecision::Macro | RefineDecision::Both))
        .collect();
    let micro_flags: Vec<bool> = decisions
        .iter()
        .map(|d| matches!(d, RefineDecision::Micro | RefineDecision::Both))
        .collect();
    mesh.refine_many(&macro_flags, &micro_flags)
}

/// One adaptive sweep: solve forward and dual, estimate, mark, and build the
/// refined mesh. Returns `None` for the next mesh when the sweep hit the
/// target error or marked nothing.
pub fn adapt_step(
    system: &dyn SlowFastSystem,
    mesh: &MacroMesh,
    goal: &GoalFunctional,
    config: &AdaptConfig,
) -> Result<(AdaptIteration, Option<MacroMesh>)> {
    let solution = solve_macro(system, mesh, &config.macro_options)?;
    let adjoint = solve_macro_adjoint(system, &solution, goal)?;
    let breakdown = estimate(system, &solution, &adjoint, goal)?;
    let decisions = mark_intervals(&breakdown, config.beta);
    let iteration = AdaptIteration {
        mesh: mesh.clone(),
        goal_value: solution.goal(goal),
        effort: total_effort(mesh),
        decisions: decisions.clone(),
        breakdown,
    };

    if let Some(target) = config.target_error {
        if iteration.breakdown.eta_total().abs() <= target {
            return Ok((iteration, None));
        }
    }
    if decisions.iter().all(|d| *d == RefineDecision::Keep) {
        return Ok((iteration, None));
    }
    let next = refine_by_decisions(mesh, &decisions)?;
    Ok((iteration, Some(next)))
}

/// Runs adaptive sweeps until the target error is met, nothing is marked, or
/// the iteration cap is reached.
pub fn adapt_loop(
    system: &dyn SlowFastSystem,
    initial_mesh: &MacroMesh,
    goal: &GoalFunctional,
    config: &AdaptConfig,
) -> Result<AdaptTrace> {
    let mut mesh = initial_mesh.clone();
    let mut iterations = Vec::new();
    let mut cumulative_effort = 0.0;
    loop {
        let (iteration, next) = adapt_step(system, &mesh, goal, config)?;
        cumulative_effort += iteration.effort;
        let target_hit = config
            .target_error
            .is_some_and(|t| iteration.breakdown.eta_total().abs() <= t);
        iterations.push(iteration);
        match next {
            None => {
                let stop = if target_hit { StopReason::TargetReached } else { StopReason::Converged };
                return Ok(AdaptTrace { iterations, final_mesh: mesh, cumulative_effort, stop });
            }
            Some(refined) => {
                mesh = refined;
                if iterations.len() >= config.max_iterations {
                    return Ok(AdaptTrace {
                        iterations,
                        final_mesh: mesh,
                        cumulative_effort,
                        stop: StopReason::MaxIterations,
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::FnSystem;
    use nalgebra::DVector;

    fn breakdown(eta_macro: Vec<f64>, eta_micro: Vec<f64>) -> EstimatorBreakdown {
        EstimatorBreakdown { eta_macro, eta_micro, eta_adjoint: 0.0 }
    }

    #[test]
    fn marking_picks_the_dominant_component() {
        // Interval 0 towers above the mean with a macro-heavy indicator;
        // interval 1 is micro-heavy; interval 2 is balanced; interval 3 is
        // quiet.
        let b = breakdown(
            vec![1.0e-3, 1.0e-6, 4.0e-4, 1.0e-6],
            vec![1.0e-6, 8.0e-4, 4.0e-4, 1.0e-6],
        );
        let marks = mark_intervals(&b, 1.2);
        assert_eq!(
            marks,
            vec![
                RefineDecision::Macro,
                RefineDecision::Micro,
                RefineDecision::Both,
                RefineDecision::Keep
            ]
        );
    }

    #[test]
    fn uniform_indicators_mark_nothing() {
        let b = breakdown(vec![1.0e-4; 6], vec![1.0e-4; 6]);
        assert!(mark_intervals(&b, 1.2).iter().all(|d| *d == RefineDecision::Keep));
        let z = breakdown(vec![0.0; 4], vec![0.0; 4]);
        assert!(mark_intervals(&z, 1.2).iter().all(|d| *d == RefineDecision::Keep));
    }

    #[test]
    fn decisions_drive_the_right_refinements() {
        let mesh = MacroMesh::uniform(8.0, 2.0, 0.25).unwrap();
        let decisions = vec![
            RefineDecision::Micro,
            RefineDecision::Keep,
            RefineDecision::Macro,
            RefineDecision::Keep,
        ];
        let refined = refine_by_decisions(&mesh, &decisions).unwrap();
        // Interval 2 splits; its patch partner (interval 3) splits with it.
        assert_eq!(refined.interval_count(), 6);
        // Interval 0 keeps its width but halves its micro step.
        assert_eq!(refined.width(0), 2.0);
        assert_eq!(refined.micro_step(0), 0.125);
        assert_eq!(refined.micro_step(1), 0.25);
        // The split intervals inherit the parent micro step.
        for n in 2..6 {
            assert_eq!(refined.width(n), 1.0);
            assert_eq!(refined.micro_step(n), 0.25);
        }
    }

    fn logistic_system() -> FnSystem {
        FnSystem::builder(1, 1)
            .epsilon(0.1)
            .horizon(10.0)
            .initial(DVector::from_vec(vec![0.0]))
            .slow(
                |y, _, out| out[0] = 1.0 / (1.0 + y[0]),
                |y, _, out| out[(0, 0)] = -1.0 / (1.0 + y[0]).powi(2),
                |_, _, out| out[(0, 0)] = 0.0,
            )
            .fast(
                |_, _, u, out| out[0] = -(u[0] - 2.0),
                |_, _, _, out| out[(0, 0)] = 0.0,
                |_, _, _, out| out[(0, 0)] = -1.0,
            )
            .build()
            .unwrap()
    }

    #[test]
    fn adaptive_loop_reduces_a_macro_dominated_error() {
        let goal = GoalFunctional::terminal_component(0);
        let mesh = MacroMesh::uniform(10.0, 2.5, 0.25).unwrap();
        let config = AdaptConfig { max_iterations: 5, ..AdaptConfig::default() };
        let trace = adapt_loop(&logistic_system(), &mesh, &goal, &config).unwrap();
        assert!(trace.iterations.len() >= 2, "expected at least one refinement");
        let first = trace.iterations.first().unwrap();
        let last = trace.last();
        assert!(
            last.breakdown.eta_total().abs() < first.breakdown.eta_total().abs(),
            "estimate should shrink: {} -> {}",
            first.breakdown.eta_total(),
            last.breakdown.eta_total()
        );
        // The problem has no micro error: every refinement must be temporal.
        for it in &trace.iterations {
            for d in &it.decisions {
                assert!(matches!(d, RefineDecision::Keep | RefineDecision::Macro));
            }
        }
        assert!(trace.cumulative_effort > 0.0);
    }

    #[test]
    fn generous_target_stops_immediately() {
        let goal = GoalFunctional::terminal_component(0);
        let mesh = MacroMesh::uniform(10.0, 2.5, 0.25).unwrap();
        let config = AdaptConfig { target_error: Some(1.0), ..AdaptConfig::default() };
        let trace = adapt_loop(&logistic_system(), &mesh, &goal, &config).unwrap();
        assert_eq!(trace.iterations.len(), 1);
        assert_eq!(trace.stop, StopReason::TargetReached);
        assert_eq!(trace.final_mesh.interval_count(), mesh.interval_count());
    }

    #[test]
    fn iteration_cap_is_respected() {
        let goal = GoalFunctional::terminal_component(0);
        let mesh = MacroMesh::uniform(10.0, 2.5, 0.25).unwrap();
        let config = AdaptConfig { max_iterations: 1, ..AdaptConfig::default() };
        let trace = adapt_loop(&logistic_system(), &mesh, &goal, &config).unwrap();
        assert_eq!(trace.iterations.len(), 1);
        assert_eq!(trace.stop, StopReason::MaxIterations);
        // The refined mesh was built but not solved on.
        assert!(trace.final_mesh.interval_count() > mesh.interval_count());
    }
}
