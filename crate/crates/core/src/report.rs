//! CSV serialization of solver artifacts. All writers emit UTF-8 with a
//! header row, `.` decimal separators, and a fixed scientific format for
//! floating-point columns, so identical inputs yield byte-identical files.

use crate::adaptivity::AdaptTrace;
use crate::adjoint::MacroAdjoint;
use crate::error::Result;
use crate::estimator::EstimatorBreakdown;
use crate::macroscale::MacroSolution;
use crate::mesh::MacroMesh;
use crate::micro::PeriodicOrbit;
use crate::reference::ExtrapolationResult;
use std::io::Write;

/// Fixed float format used in every numeric CSV column.
fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Mesh layout: one row per macro interval.
pub fn write_mesh_csv(out: &mut dyn Write, mesh: &MacroMesh) -> Result<()> {
    writeln!(out, "n,t_start,t_end,micro_step")?;
    for n in 0..mesh.interval_count() {
        let (a, b) = mesh.interval(n);
        writeln!(out, "{},{},{},{}", n + 1, fmt(a), fmt(b), fmt(mesh.micro_step(n)))?;
    }
    Ok(())
}

/// Macro trajectory: nodal slow states, row 0 being the initial state.
pub fn write_trajectory_csv(out: &mut dyn Write, solution: &MacroSolution) -> Result<()> {
    let trajectory = solution.trajectory();
    let dim = trajectory.dim();
    write!(out, "n,t")?;
    for i in 0..dim {
        write!(out, ",y{}", i + 1)?;
    }
    writeln!(out)?;
    for (n, t) in trajectory.times().iter().enumerate() {
        write!(out, "{},{}", n, fmt(*t))?;
        let y = trajectory.value(n);
        for i in 0..dim {
            write!(out, ",{}", fmt(y[i]))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Adjoint weights: one row per macro interval, stamped at the midpoint.
pub fn write_adjoint_csv(
    out: &mut dyn Write,
    mesh: &MacroMesh,
    adjoint: &MacroAdjoint,
) -> Result<()> {
    let dim = adjoint.value(0).len();
    write!(out, "n,t_mid")?;
    for i in 0..dim {
        write!(out, ",z{}", i + 1)?;
    }
    writeln!(out)?;
    for n in 0..mesh.interval_count() {
        let (a, b) = mesh.interval(n);
        write!(out, "{},{}", n + 1, fmt(0.5 * (a + b)))?;
        let z = adjoint.value(n);
        for i in 0..dim {
            write!(out, ",{}", fmt(z[i]))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// One periodic micro orbit: nodal fast states over the unit period.
pub fn write_orbit_csv(out: &mut dyn Write, orbit: &PeriodicOrbit) -> Result<()> {
    let dim = orbit.value(0).len();
    write!(out, "s")?;
    for i in 0..dim {
        write!(out, ",u{}", i + 1)?;
    }
    writeln!(out)?;
    for m in 0..=orbit.grid().intervals() {
        write!(out, "{}", fmt(orbit.grid().node(m)))?;
        let u = orbit.value(m);
        for i in 0..dim {
            write!(out, ",{}", fmt(u[i]))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Interval-wise estimator breakdown.
pub fn write_breakdown_csv(
    out: &mut dyn Write,
    mesh: &MacroMesh,
    breakdown: &EstimatorBreakdown,
) -> Result<()> {
    writeln!(out, "n,t_start,t_end,micro_step,eta_macro,eta_micro")?;
    for n in 0..mesh.interval_count() {
        let (a, b) = mesh.interval(n);
        writeln!(
            out,
            "{},{},{},{},{},{}",
            n + 1,
            fmt(a),
            fmt(b),
            fmt(mesh.micro_step(n)),
            fmt(breakdown.eta_macro[n]),
            fmt(breakdown.eta_micro[n]),
        )?;
    }
    Ok(())
}

/// One uniform-run summary line: step sizes, true error (when a reference is
/// known), estimator parts, and effectivity.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub micro_step: f64,
    pub macro_step: f64,
    pub goal_value: f64,
    pub error: Option<f64>,
    pub eta_total: f64,
    pub eta_macro: f64,
    pub eta_micro: f64,
    pub eta_adjoint: f64,
    pub effectivity: Option<f64>,
}

impl SummaryRow {
    /// Assembles a row from an estimator breakdown, attaching the error and
    /// effectivity when a reference goal value is available.
    pub fn from_breakdown(
        micro_step: f64,
        macro_step: f64,
        goal_value: f64,
        reference: Option<f64>,
        breakdown: &EstimatorBreakdown,
    ) -> Self {
        let error = reference.map(|r| goal_value - r);
        Self {
            micro_step,
            macro_step,
            goal_value,
            error,
            eta_total: breakdown.eta_total(),
            eta_macro: breakdown.eta_macro_total(),
            eta_micro: breakdown.eta_micro_total(),
            eta_adjoint: breakdown.eta_adjoint,
            effectivity: error.and_then(|e| breakdown.effectivity(e)),
        }
    }
}

/// Summary table across uniform runs (one row per `(k, K)` pair).
pub fn write_summary_csv(out: &mut dyn Write, rows: &[SummaryRow]) -> Result<()> {
    writeln!(out, "k,K,J,err,eta,eta_macro,eta_micro,eta_adjoint,eff")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            fmt(r.micro_step),
            fmt(r.macro_step),
            fmt(r.goal_value),
            fmt_opt(r.error),
            fmt(r.eta_total),
            fmt(r.eta_macro),
            fmt(r.eta_micro),
            fmt(r.eta_adjoint),
            fmt_opt(r.effectivity),
        )?;
    }
    Ok(())
}

/// Resolved-reference table: goal values per step with the extrapolation
/// attached to the finest row.
pub fn write_reference_csv(
    out: &mut dyn Write,
    entries: &[(f64, f64)],
    extrapolation: Option<&ExtrapolationResult>,
) -> Result<()> {
    writeln!(out, "k,J,order,limit")?;
    for (i, (k, j)) in entries.iter().enumerate() {
        let tail = match extrapolation {
            Some(ex) if i + 1 == entries.len() => format!("{},{}", fmt(ex.order), fmt(ex.limit)),
            _ => ",".to_string(),
        };
        writeln!(out, "{},{},{}", fmt(*k), fmt(*j), tail)?;
    }
    Ok(())
}

/// Adaptive-loop trace: one row per sweep.
pub fn write_adapt_trace_csv(out: &mut dyn Write, trace: &AdaptTrace) -> Result<()> {
    writeln!(out, "l,N,J,eta_total,eta_macro,eta_micro,effort,cumulative_effort")?;
    let mut cumulative = 0.0;
    for (l, it) in trace.iterations.iter().enumerate() {
        cumulative += it.effort;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            l + 1,
            it.mesh.interval_count(),
            fmt(it.goal_value),
            fmt(it.breakdown.eta_total()),
            fmt(it.breakdown.eta_macro_total()),
            fmt(it.breakdown.eta_micro_total()),
            fmt(it.effort),
            fmt(cumulative),
        )?;
    }
    Ok(())
}

/// One row of the effort comparison table.
#[derive(Debug, Clone)]
pub struct EffortRow {
    /// Label: `resolved`, `uniform`, or `adaptive`.
    pub approach: String,
    /// True error against the reference, when known.
    pub error: Option<f64>,
    /// Micro (or resolved) step size.
    pub micro_step: f64,
    /// Macro step size; absent for resolved runs.
    pub macro_step: Option<f64>,
    /// Step count: raw steps for resolved runs, effort with the adjoint and
    /// cycling multipliers applied for multiscale runs.
    pub steps: f64,
}

/// Effort comparison across resolved, uniform, and adaptive runs.
pub fn write_effort_csv(out: &mut dyn Write, rows: &[EffortRow]) -> Result<()> {
    writeln!(out, "approach,error,k,K,steps")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.approach,
            fmt_opt(r.error),
            fmt(r.micro_step),
            fmt_opt(r.macro_step),
            fmt(r.steps),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::macroscale::{solve_macro, MacroOptions};
    use crate::systems::FnSystem;
    use nalgebra::DVector;

    fn tiny_system() -> FnSystem {
        FnSystem::builder(1, 1)
            .epsilon(0.1)
            .horizon(4.0)
            .initial(DVector::from_vec(vec![0.0]))
            .slow(
                |_, _, out| out[0] = 1.0,
                |_, _, out| out[(0, 0)] = 0.0,
                |_, _, out| out[(0, 0)] = 0.0,
            )
            .fast(
                |_, _, u, out| out[0] = -(u[0] - 1.0),
                |_, _, _, out| out[(0, 0)] = 0.0,
                |_, _, _, out| out[(0, 0)] = -1.0,
            )
            .build()
            .unwrap()
    }

    #[test]
    fn mesh_and_breakdown_rows_are_one_based_and_counted() {
        let mesh = MacroMesh::uniform(4.0, 1.0, 0.25).unwrap();
        let mut buf = Vec::new();
        write_mesh_csv(&mut buf, &mesh).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "n,t_start,t_end,micro_step");
        assert!(lines[1].starts_with("1,"));
        assert!(lines[4].starts_with("4,"));

        let breakdown = EstimatorBreakdown {
            eta_macro: vec![0.25; 4],
            eta_micro: vec![-0.5; 4],
            eta_adjoint: 0.0,
        };
        let mut buf = Vec::new();
        write_breakdown_csv(&mut buf, &mesh, &breakdown).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("2.500000000000e-1"));
        assert!(text.contains("-5.000000000000e-1"));
    }

    #[test]
    fn trajectory_and_orbit_dumps_are_deterministic() {
        let sys = tiny_system();
        let mesh = MacroMesh::uniform(4.0, 1.0, 0.25).unwrap();
        let solution = solve_macro(&sys, &mesh, &MacroOptions::default()).unwrap();

        let mut first = Vec::new();
        write_trajectory_csv(&mut first, &solution).unwrap();
        let mut second = Vec::new();
        write_trajectory_csv(&mut second, &solution).unwrap();
        assert_eq!(first, second);
        let text = String::from_utf8(first).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("n,t,y1\n0,"));

        let mut buf = Vec::new();
        write_orbit_csv(&mut buf, &solution.orbits()[0][0]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(text.lines().next().unwrap(), "s,u1");
    }

    #[test]
    fn summary_rows_handle_missing_reference() {
        let breakdown = EstimatorBreakdown {
            eta_macro: vec![1.0e-3],
            eta_micro: vec![2.0e-3],
            eta_adjoint: -1.0e-6,
        };
        let with_ref = SummaryRow::from_breakdown(0.1, 1.0e5, 1.05, Some(1.0), &breakdown);
        assert!((with_ref.error.unwrap() - 0.05).abs() < 1e-12);
        let eff = with_ref.effectivity.unwrap();
        assert!((eff - 100.0 * (3.0e-3 - 1.0e-6) / 0.05).abs() < 1e-12);

        let without = SummaryRow::from_breakdown(0.1, 1.0e5, 1.05, None, &breakdown);
        assert!(without.error.is_none() && without.effectivity.is_none());

        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &[with_ref, without]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "k,K,J,err,eta,eta_macro,eta_micro,eta_adjoint,eff");
        // Missing reference leaves the error and effectivity cells empty.
        assert!(lines[2].ends_with(",,") || lines[2].split(',').nth(3) == Some(""));
    }

    #[test]
    fn reference_table_attaches_extrapolation_to_last_row() {
        let ex = crate::reference::extrapolate([1.004, 1.001, 1.00025]);
        let entries = [(0.01, 1.004), (0.005, 1.001), (0.0025, 1.00025)];
        let mut buf = Vec::new();
        write_reference_csv(&mut buf, &entries, Some(&ex)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with(",,"));
        assert!(!lines[3].ends_with(",,"));
        assert_eq!(lines[3].split(',').count(), 4);
    }

    #[test]
    fn effort_table_formats_every_approach() {
        let rows = [
            EffortRow {
                approach: "resolved".into(),
                error: None,
                micro_step: 0.005,
                macro_step: None,
                steps: 2.0e8,
            },
            EffortRow {
                approach: "uniform".into(),
                error: Some(4.2e-5),
                micro_step: 1.0 / 160.0,
                macro_step: Some(6250.0),
                steps: 513_800.0,
            },
        ];
        let mut buf = Vec::new();
        write_effort_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("resolved,,"));
        assert!(text.lines().nth(2).unwrap().starts_with("uniform,"));
    }
}
