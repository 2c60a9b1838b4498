//! Discrete adjoint of the macro scheme: piecewise-constant dual weights
//! propagated backward from the goal functional, with the full (tangent-
//! corrected) gradients of the averaged right-hand side.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::Result;
use crate::functions::PiecewiseConstantFn;
use crate::linalg::solve_in_place;
use crate::macroscale::MacroSolution;
use crate::micro::{solve_tangent, transfer_grad_full};
use crate::quadrature::GAUSS_THETA;
use crate::systems::{GoalFunctional, SlowFastSystem};

/// Dual solution of the macro scheme.
#[derive(Debug, Clone)]
pub struct MacroAdjoint {
    weights: PiecewiseConstantFn,
    gradients: Vec<[DMatrix<f64>; 2]>,
    epsilon: f64,
    first_width: f64,
}

impl MacroAdjoint {
    /// Piecewise-constant dual weights, one value per macro interval.
    pub fn weights(&self) -> &PiecewiseConstantFn {
        &self.weights
    }

    /// Dual weight on interval `n`.
    pub fn value(&self, n: usize) -> &DVector<f64> {
        self.weights.value(n)
    }

    /// Full gradients of the averaged right-hand side at the two Gauss-point
    /// states of every interval.
    pub fn gradients(&self) -> &[[DMatrix<f64>; 2]] {
        &self.gradients
    }

    pub fn gradient(&self, n: usize, q: usize) -> &DMatrix<f64> {
        &self.gradients[n][q]
    }

    /// Discrete sensitivity of the goal to the initial slow state,
    /// `dJ/dy0 = (I + eps * S_0) Z_0` with
    /// `S_0 = (K_0/2) sum_q (1-theta_q) (dF)_q^T`. Useful as an exactness
    /// check of the dual solve against finite differences of the forward
    /// solver.
    pub fn initial_sensitivity(&self) -> DVector<f64> {
        let z0 = self.value(0);
        let c = z0.len();
        let half = 0.5 * self.first_width;
        let mut out = z0.clone();
        let mut s0 = DMatrix::zeros(c, c);
        for q in 0..2 {
            let g = &self.gradients[0][q];
            for i in 0..c {
                for j in 0..c {
                    s0[(i, j)] += half * (1.0 - GAUSS_THETA[q]) * g[(j, i)];
                }
            }
        }
        out.gemv(self.epsilon, &s0, z0, 1.0);
        out
    }
}

/// Solves the discrete dual problem: find piecewise-constant `Z` with
///
/// ```text
///     int (phi' - eps * dF(Y) phi) . Z dt = J'(phi)
/// ```
///
/// for all continuous piecewise-linear `phi` vanishing at `t = 0`. Testing
/// with the nodal hats yields the backward recursion (0-based intervals)
///
/// ```text
///     (I - eps R_{N-1}) Z_{N-1} = dJ,
///     (I - eps R_n) Z_n = (I + eps S_{n+1}) Z_{n+1},
///     R_n = (K_n/2) sum_q theta_q  (dF)_{n,q}^T,
///     S_n = (K_n/2) sum_q (1-theta_q) (dF)_{n,q}^T,
/// ```
///
/// where `dF` is the *full* gradient of the averaged right-hand side at the
/// Gauss-point states, computed through the discrete tangent of each cached
/// periodic orbit.
pub fn solve_macro_adjoint(
    system: &dyn SlowFastSystem,
    solution: &MacroSolution,
    goal: &GoalFunctional,
) -> Result<MacroAdjoint> {
    let c = system.slow_dim();
    let mesh = solution.mesh();
    let n_count = mesh.interval_count();

    let gradients: Vec<[DMatrix<f64>; 2]> = solution
        .orbits()
        .par_iter()
        .map(|pair| -> Result<[DMatrix<f64>; 2]> {
            let t0 = solve_tangent(system, &pair[0])?;
            let t1 = solve_tangent(system, &pair[1])?;
            Ok([
                transfer_grad_full(system, &pair[0], &t0),
                transfer_grad_full(system, &pair[1], &t1),
            ])
        })
        .collect::<Result<Vec<_>>>()?;

    let eps = system.epsilon();
    let mut weights = vec![DVector::zeros(c); n_count];
    let mut lhs = DMatrix::zeros(c, c);
    let mut rhs = goal.gradient(c);
    for n in (0..n_count).rev() {
        let half = 0.5 * mesh.width(n);
        // lhs = I - eps * R_n.
        lhs.fill(0.0);
        lhs.fill_diagonal(1.0);
        for q in 0..2 {
            let g = &gradients[n][q];
            for i in 0..c {
                for j in 0..c {
                    lhs[(i, j)] -= eps * half * GAUSS_THETA[q] * g[(j, i)];
                }
            }
        }
        solve_in_place(&mut lhs, &mut rhs)?;
        weights[n] = rhs.clone();
        if n > 0 {
            // rhs = (I + eps * S_n) Z_n feeds the next (earlier) interval.
            let z = weights[n].clone();
            for q in 0..2 {
                let g = &gradients[n][q];
                for i in 0..c {
                    let mut acc = 0.0;
                    for j in 0..c {
                        acc += g[(j, i)] * z[j];
                    }
                    rhs[i] += eps * half * (1.0 - GAUSS_THETA[q]) * acc;
                }
            }
        }
    }

    Ok(MacroAdjoint {
        weights: PiecewiseConstantFn::new(mesh.nodes().to_vec(), weights)?,
        gradients,
        epsilon: eps,
        first_width: mesh.width(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::macroscale::{solve_macro, MacroOptions};
    use crate::mesh::MacroMesh;
    use crate::systems::FnSystem;
    use approx::assert_relative_eq;

    fn vec1(v: f64) -> DVector<f64> {
        DVector::from_vec(vec![v])
    }

    fn tracking_system(epsilon: f64, horizon: f64, y0: f64) -> FnSystem {
        FnSystem::builder(1, 1)
            .epsilon(epsilon)
            .horizon(horizon)
            .initial(vec1(y0))
            .slow(
                |_, u, out| out[0] = u[0],
                |_, _, out| out[(0, 0)] = 0.0,
                |_, _, out| out[(0, 0)] = 1.0,
            )
            .fast(
                |_, y, u, out| out[0] = -(u[0] - y[0]),
                |_, _, _, out| out[(0, 0)] = 1.0,
                |_, _, _, out| out[(0, 0)] = -1.0,
            )
            .build()
            .unwrap()
    }

    /// `u' = -(u - y^2)`, `f = u`: averaged equation `y' = eps y^2`; the full
    /// gradient `2y` needs the tangent (the partial gradient is zero).
    fn quadratic_system(epsilon: f64, horizon: f64, y0: f64) -> FnSystem {
        FnSystem::builder(1, 1)
            .epsilon(epsilon)
            .horizon(horizon)
            .initial(vec1(y0))
            .slow(
                |_, u, out| out[0] = u[0],
                |_, _, out| out[(0, 0)] = 0.0,
                |_, _, out| out[(0, 0)] = 1.0,
            )
            .fast(
                |_, y, u, out| out[0] = -(u[0] - y[0] * y[0]),
                |_, y, _, out| out[(0, 0)] = 2.0 * y[0],
                |_, _, _, out| out[(0, 0)] = -1.0,
            )
            .build()
            .unwrap()
    }

    #[test]
    fn goal_weights_are_unit_for_decoupled_dynamics() {
        let sys = FnSystem::builder(1, 1)
            .epsilon(1e-2)
            .horizon(10.0)
            .slow(
                |_, _, out| out[0] = 1.0,
                |_, _, out| out[(0, 0)] = 0.0,
                |_, _, out| out[(0, 0)] = 0.0,
            )
            .fast(
                |_, _, u, out| out[0] = -(u[0] - 2.0),
                |_, _, _, out| out[(0, 0)] = 0.0,
                |_, _, _, out| out[(0, 0)] = -1.0,
            )
            .build()
            .unwrap();
        let mesh = MacroMesh::uniform(10.0, 2.5, 0.25).unwrap();
        let sol = solve_macro(&sys, &mesh, &MacroOptions::default()).unwrap();
        let adj = solve_macro_adjoint(&sys, &sol, &GoalFunctional::terminal_component(0)).unwrap();
        for n in 0..mesh.interval_count() {
            assert_relative_eq!(adj.value(n)[0], 1.0, epsilon = 1e-13);
            assert_relative_eq!(adj.gradient(n, 0)[(0, 0)], 0.0, epsilon = 1e-13);
        }
        assert_relative_eq!(adj.initial_sensitivity()[0], 1.0, epsilon = 1e-13);
    }

    #[test]
    fn linear_dynamics_weights_follow_the_closed_form() {
        // dF = 1, so Z_{N-1} = 1/(1-x) and Z_n = Z_{n+1} (1+x)/(1-x) with
        // x = eps*K/2.
        let eps = 0.05;
        let mesh = MacroMesh::uniform(20.0, 2.5, 0.125).unwrap();
        let sys = tracking_system(eps, 20.0, 1.0);
        let sol = solve_macro(&sys, &mesh, &MacroOptions::default()).unwrap();
        let adj = solve_macro_adjoint(&sys, &sol, &GoalFunctional::terminal_component(0)).unwrap();
        let x = 0.5 * eps * 2.5;
        let n = mesh.interval_count();
        let mut expected = 1.0 / (1.0 - x);
        for i in (0..n).rev() {
            assert_relative_eq!(adj.value(i)[0], expected, epsilon = 1e-11);
            expected *= (1.0 + x) / (1.0 - x);
        }
        // The interval weight approximates exp(eps (T - t)) at the interval
        // midpoint.
        assert_relative_eq!(adj.value(0)[0], (eps * (20.0 - 0.5 * 2.5)).exp(), max_relative = 5e-3);
    }

    #[test]
    fn initial_sensitivity_matches_forward_differences() {
        let eps = 0.05;
        let horizon = 10.0; // eps*T*y0 = 0.25 < 1, well inside blow-up.
        let y0 = 0.5;
        let goal = GoalFunctional::terminal_component(0);
        let mesh = MacroMesh::uniform(horizon, 2.5, 0.125).unwrap();
        let opts = MacroOptions::default();

        let sys = quadratic_system(eps, horizon, y0);
        let sol = solve_macro(&sys, &mesh, &opts).unwrap();
        let adj = solve_macro_adjoint(&sys, &sol, &goal).unwrap();
        let sensitivity = adj.initial_sensitivity()[0];

        let delta = 1e-4;
        let j_plus = solve_macro(&quadratic_system(eps, horizon, y0 + delta), &mesh, &opts)
            .unwrap()
            .goal(&goal);
        let j_minus = solve_macro(&quadratic_system(eps, horizon, y0 - delta), &mesh, &opts)
            .unwrap()
            .goal(&goal);
        let fd = (j_plus - j_minus) / (2.0 * delta);
        assert_relative_eq!(sensitivity, fd, max_relative = 1e-6);
    }
}
