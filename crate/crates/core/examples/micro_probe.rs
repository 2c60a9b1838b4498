use nalgebra::{DMatrix, DVector};
use slowfast_core::quadrature::gauss_points;
use slowfast_core::{
    make_benchmark, solve_micro_adjoint, solve_periodic, transfer, MicroGrid, OrbitOptions,
    PiecewiseConstantFn, PiecewiseLinearFn, SlowFastSystem,
};

/// Continuous periodic linear interpolant through interval midpoint values.
struct MidpointInterp {
    mids: Vec<f64>,
    vals: Vec<DVector<f64>>,
}

impl MidpointInterp {
    fn new(step: f64, vals: Vec<DVector<f64>>) -> Self {
        let mids = (0..vals.len()).map(|m| (m as f64 + 0.5) * step).collect();
        Self { mids, vals }
    }

    fn eval_into(&self, s: f64, out: &mut DVector<f64>) {
        let m_count = self.vals.len();
        // Periodic wrap: interior segments plus the seam segment of width k.
        let (a, b, w) = if s <= self.mids[0] {
            let span = self.mids[0] + 1.0 - self.mids[m_count - 1];
            (m_count - 1, 0, (s + 1.0 - self.mids[m_count - 1]) / span)
        } else if s >= self.mids[m_count - 1] {
            let span = self.mids[0] + 1.0 - self.mids[m_count - 1];
            (m_count - 1, 0, (s - self.mids[m_count - 1]) / span)
        } else {
            let m = self.mids.partition_point(|&x| x < s).saturating_sub(1);
            (m, m + 1, (s - self.mids[m]) / (self.mids[m + 1] - self.mids[m]))
        };
        out.copy_from(&self.vals[a]);
        *out *= 1.0 - w;
        out.axpy(w, &self.vals[b], 1.0);
    }
}

/// Splits the micro indicator into its primal-residual and adjoint-residual
/// halves (before the outer 1/2 factors) for diagnosis. `same_mesh_dual`
/// switches the dual weight from the patchwise linear reconstruction to the
/// continuous midpoint interpolant.
fn eta_pi_split(
    system: &dyn SlowFastSystem,
    orbit: &slowfast_core::PeriodicOrbit,
    adjoint: &slowfast_core::MicroAdjoint,
    same_mesh_dual: bool,
) -> (f64, f64) {
    let d = system.fast_dim();
    let m_count = orbit.grid().intervals();
    let k = orbit.grid().step();
    let half_k = 0.5 * k;
    let nodes: Vec<f64> = orbit.grid().nodes();

    let u_tilde = PiecewiseLinearFn::new(nodes.clone(), orbit.values().to_vec())
        .unwrap()
        .patch_quadratic()
        .unwrap();
    let cols: Vec<DVector<f64>> =
        (0..m_count).map(|m| adjoint.value(m).column(0).into_owned()).collect();
    let z_tilde =
        PiecewiseConstantFn::new(nodes.clone(), cols.clone()).unwrap().patch_linear().unwrap();
    let z_mid = MidpointInterp::new(k, cols);

    let mut term_primal = 0.0;
    let mut term_adjoint = 0.0;
    let mut slope = DVector::zeros(d);
    let mut uq = DVector::zeros(d);
    let mut gq = DVector::zeros(d);
    let mut au = DMatrix::zeros(d, d);
    let mut fu = DMatrix::zeros(1, d);
    let mut psi = DVector::zeros(d);
    let mut psi_prime = DVector::zeros(d);
    let mut zq = DVector::zeros(d);
    for m in 0..m_count {
        let chi = gauss_points(nodes[m], nodes[m + 1]);
        slope.copy_from(&orbit.values()[m + 1]);
        slope -= &orbit.values()[m];
        slope /= k;
        for q in 0..2 {
            orbit.gauss_state_into(m, q, &mut uq);
            system.fast_rhs(chi[q], orbit.anchor(), &uq, &mut gq);
            system.fast_rhs_grad_u(chi[q], orbit.anchor(), &uq, &mut au);
            system.slow_rhs_grad_u(orbit.anchor(), &uq, &mut fu);
            u_tilde.eval_into(chi[q], &mut psi);
            psi -= &uq;
            u_tilde.deriv_into(chi[q], &mut psi_prime);
            psi_prime -= &slope;

            let z_col = adjoint.value(m).column(0);
            if same_mesh_dual {
                z_mid.eval_into(chi[q], &mut zq);
            } else {
                z_tilde.eval_into(chi[q], &mut zq);
            }
            zq -= &z_col;
            for i in 0..d {
                term_primal += half_k * -(slope[i] - gq[i]) * zq[i];
                let mut a_psi = 0.0;
                for l in 0..d {
                    a_psi += au[(i, l)] * psi[l];
                }
                term_adjoint += half_k * (fu[(0, i)] * psi[i] - (psi_prime[i] - a_psi) * z_col[i]);
            }
        }
    }
    (term_primal, term_adjoint)
}

fn main() {
    let sys = make_benchmark("osc1".parse().unwrap(), None);
    let opts = OrbitOptions { periodicity_tol: 1e-12, ..OrbitOptions::default() };

    for step in [0.1, 0.05, 0.025] {
        println!("--- micro step {step} ---");
        for yv in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.13] {
            let y = DVector::from_vec(vec![yv]);
            let fine = MicroGrid::new(1.0 / 1280.0).unwrap();
            let orbit_fine = solve_periodic(&sys, &y, &fine, &opts, None).unwrap();
            let f_exact = transfer(&sys, &orbit_fine)[0];

            let grid = MicroGrid::new(step).unwrap();
            let orbit = solve_periodic(&sys, &y, &grid, &opts, None).unwrap();
            let f_k = transfer(&sys, &orbit)[0];
            let true_diff = f_exact - f_k;
            let adjoint = solve_micro_adjoint(&sys, &orbit).unwrap();
            let (tp, ta) = eta_pi_split(&sys, &orbit, &adjoint, false);
            let (tp2, ta2) = eta_pi_split(&sys, &orbit, &adjoint, true);
            println!(
                "y={yv:.2}  true={true_diff:+.4e}  patch={:+.4e} ({:+.3})  same-mesh={:+.4e} ({:+.3})",
                0.5 * (tp + ta),
                0.5 * (tp + ta) / true_diff,
                0.5 * (tp2 + ta2),
                0.5 * (tp2 + ta2) / true_diff,
            );
        }
    }
}
