use nalgebra::{DMatrix, DVector};
use slowfast_core::quadrature::gauss_points;
use slowfast_core::{
    estimate, estimate_adjoint_conformity, eta_pi_for_orbit, make_benchmark, solve_macro,
    solve_macro_adjoint, solve_micro_adjoint, solve_periodic, transfer, GoalFunctional, MacroMesh,
    MacroOptions, MicroAdjoint, MicroGrid, OrbitOptions, PeriodicOrbit, SlowFastSystem,
};

/// Symmetric DWR micro estimate with weights from a half-step solve instead
/// of reconstructions: w = u_h - i_V u_h and z_h - i_W z_h.
fn eta_fine_weights(
    system: &dyn SlowFastSystem,
    orbit: &PeriodicOrbit,
    adjoint: &MicroAdjoint,
    orbit_h: &PeriodicOrbit,
    adjoint_h: &MicroAdjoint,
) -> f64 {
    let d = system.fast_dim();
    let m_count = orbit.grid().intervals();
    let k = orbit.grid().step();
    let h = 0.5 * k;
    let y = orbit.anchor();

    let mut term1 = 0.0;
    let mut term2 = 0.0;
    let mut gq = DVector::zeros(d);
    let mut au = DMatrix::zeros(d, d);
    let mut fu = DMatrix::zeros(1, d);
    let mut uq = DVector::zeros(d);
    let mut w = DVector::zeros(d);
    let mut w_prime = DVector::zeros(d);
    let mut slope = DVector::zeros(d);
    let mut coarse_interp = DVector::zeros(d);
    for m in 0..m_count {
        slope.copy_from(&orbit.values()[m + 1]);
        slope -= &orbit.values()[m];
        slope /= k;
        let z_m = adjoint.value(m).column(0);
        // i_W z_h on the coarse interval: mean of the two fine constants.
        let zf0 = adjoint_h.value(2 * m).column(0);
        let zf1 = adjoint_h.value(2 * m + 1).column(0);
        for j in 0..2 {
            let fine = 2 * m + j;
            let a = fine as f64 * h;
            let b = a + h;
            let chi = gauss_points(a, b);
            let zf = adjoint_h.value(fine).column(0);
            let s_m = m as f64 * k;
            for q in 0..2 {
                let s = chi[q];
                // Coarse trajectory at s.
                uq.copy_from(&orbit.values()[m]);
                uq.axpy(s - s_m, &slope, 1.0);
                system.fast_rhs(s, y, &uq, &mut gq);
                system.fast_rhs_grad_u(s, y, &uq, &mut au);
                system.slow_rhs_grad_u(y, &uq, &mut fu);
                // Fine-solve weight w = u_h - i_V u_h.
                let lam = (s - a) / h;
                w.copy_from(&orbit_h.values()[fine]);
                w *= 1.0 - lam;
                w.axpy(lam, &orbit_h.values()[fine + 1], 1.0);
                let mu = (s - s_m) / k;
                coarse_interp.copy_from(&orbit_h.values()[2 * m]);
                coarse_interp *= 1.0 - mu;
                coarse_interp.axpy(mu, &orbit_h.values()[2 * m + 2], 1.0);
                w -= &coarse_interp;
                w_prime.copy_from(&orbit_h.values()[fine + 1]);
                w_prime -= &orbit_h.values()[fine];
                w_prime /= h;
                w_prime.axpy(-1.0 / k, &orbit_h.values()[2 * m + 2], 1.0);
                w_prime.axpy(1.0 / k, &orbit_h.values()[2 * m], 1.0);

                for i in 0..d {
                    let zweight = zf[i] - 0.5 * (zf0[i] + zf1[i]);
                    term1 += 0.5 * h * -(slope[i] - gq[i]) * zweight;
                    let mut a_w = 0.0;
                    for l in 0..d {
                        a_w += au[(i, l)] * w[l];
                    }
                    term2 += 0.5 * h * (fu[(0, i)] * w[i] - (w_prime[i] - a_w) * z_m[i]);
                }
            }
        }
    }
    0.5 * (term1 + term2)
}

/// DWR sub-terms of the reconstruction-based micro indicator, separately:
/// (T_a, T_b, T_c, nonlinear J(u~)-J(u_k)) with
///   T_a = int fu . psi,  T_b = -int (psi' - A psi) . z_k,
///   T_c = -int (u' - g) . (z~ - z_k).
fn eta_pi_parts(
    system: &dyn SlowFastSystem,
    orbit: &PeriodicOrbit,
    adjoint: &MicroAdjoint,
) -> (f64, f64, f64, f64) {
    use slowfast_core::{PiecewiseConstantFn, PiecewiseLinearFn};
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
    let z_tilde = PiecewiseConstantFn::new(nodes.clone(), cols).unwrap().patch_linear().unwrap();

    let (mut t_a, mut t_b, mut t_c, mut t_nl) = (0.0, 0.0, 0.0, 0.0);
    let mut slope = DVector::zeros(d);
    let mut uq = DVector::zeros(d);
    let mut urec = DVector::zeros(d);
    let mut gq = DVector::zeros(d);
    let mut au = DMatrix::zeros(d, d);
    let mut fu = DMatrix::zeros(1, d);
    let mut psi = DVector::zeros(d);
    let mut psi_prime = DVector::zeros(d);
    let mut zq = DVector::zeros(d);
    let mut f_rec = DVector::zeros(1);
    let mut f_disc = DVector::zeros(1);
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
            u_tilde.eval_into(chi[q], &mut urec);
            psi.copy_from(&urec);
            psi -= &uq;
            u_tilde.deriv_into(chi[q], &mut psi_prime);
            psi_prime -= &slope;

            let z_col = adjoint.value(m).column(0);
            z_tilde.eval_into(chi[q], &mut zq);
            zq -= &z_col;
            for i in 0..d {
                t_c += half_k * -(slope[i] - gq[i]) * zq[i];
                let mut a_psi = 0.0;
                for l in 0..d {
                    a_psi += au[(i, l)] * psi[l];
                }
                t_a += half_k * fu[(0, i)] * psi[i];
                t_b += half_k * -(psi_prime[i] - a_psi) * z_col[i];
            }
            system.slow_rhs(orbit.anchor(), &urec, &mut f_rec);
            system.slow_rhs(orbit.anchor(), &uq, &mut f_disc);
            t_nl += half_k * (f_rec[0] - f_disc[0]);
        }
    }
    (t_a, t_b, t_c, t_nl)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let big_k: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2500.0);
    let k: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let fine_m: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1280);

    let sys = make_benchmark("osc1".parse().unwrap(), None);
    let goal = GoalFunctional::terminal_component(0);
    let mesh = MacroMesh::uniform(sys.horizon(), big_k, k).unwrap();
    let sol = solve_macro(&sys, &mesh, &MacroOptions::default()).unwrap();
    let adj = solve_macro_adjoint(&sys, &sol, &goal).unwrap();
    let est = estimate(&sys, &sol, &adj, &goal).unwrap();

    let eps = sys.epsilon();
    let z_tilde = adj.weights().patch_linear().unwrap();
    let fine = MicroGrid::new(1.0 / fine_m.max(2) as f64).unwrap();
    let opts = OrbitOptions { periodicity_tol: 1.0e-11, max_cycles: 1000, ..OrbitOptions::default() };

    let mut warm: Option<PeriodicOrbit> = None;
    let mut weight = DVector::zeros(1);
    // Totals: [true, A (4/3 two-grid), B (two-grid + recon on k/2), E (fine weights),
    //          T_a, T_a+T_b, T_c, nonlinear]
    let mut totals = [0.0; 8];
    for n in 0..mesh.interval_count() {
        let (a, b) = mesh.interval(n);
        let half = 0.5 * (b - a);
        let chi = gauss_points(a, b);
        let z_n = adj.value(n);
        for q in 0..2 {
            let anchor = &sol.steps()[n].anchors[q];
            let orbit = &sol.orbits()[n][q];
            let f_k = sol.steps()[n].transfers[q][0];

            let orbit_h =
                solve_periodic(&sys, anchor, &mesh.micro_grid(n).halved(), &opts, Some(orbit))
                    .unwrap();
            let f_h = transfer(&sys, &orbit_h)[0];
            let adjoint_h = solve_micro_adjoint(&sys, &orbit_h).unwrap();
            let recon_h = eta_pi_for_orbit(&sys, &orbit_h, &adjoint_h).unwrap()[0];
            let adjoint = solve_micro_adjoint(&sys, orbit).unwrap();
            let e_var = eta_fine_weights(&sys, orbit, &adjoint, &orbit_h, &adjoint_h);
            let (t_a, t_b, t_c, t_nl) = eta_pi_parts(&sys, orbit, &adjoint);

            let f_fine = if fine_m > 0 {
                let orbit_fine = solve_periodic(&sys, anchor, &fine, &opts, warm.as_ref()).unwrap();
                let f = transfer(&sys, &orbit_fine)[0];
                warm = Some(orbit_fine);
                f
            } else {
                f_k
            };

            z_tilde.eval_into(chi[q], &mut weight);
            weight += z_n;
            let outer = -0.5 * eps * half * weight[0];
            totals[0] += outer * (f_fine - f_k);
            totals[1] += outer * (4.0 / 3.0) * (f_h - f_k);
            totals[2] += outer * ((f_h - f_k) + recon_h);
            totals[3] += outer * e_var;
            totals[4] += outer * t_a;
            totals[5] += outer * (t_a + t_b);
            totals[6] += outer * t_c;
            totals[7] += outer * t_nl;
        }
    }
    let j_val = sol.terminal()[0];
    println!(
        "stats: solves={} micro_steps={} max_cycles={} max_defect={:.2e}",
        sol.orbit_solves, sol.micro_steps, sol.max_cycles, sol.max_defect
    );
    let eta_prime = estimate_adjoint_conformity(&sys, &sol, &adj, &opts).unwrap();
    println!("K={big_k} k={k}");
    println!("J = {:.8}  err vs 1.08704164 = {:+.6e}", j_val, 1.08704164 - j_val);
    println!("eta_EG = {:+.6e}  eta_EF' = {:+.6e}", est.eta_macro_total(), eta_prime);
    println!(
        "eta_total = {:+.6e}  eff = {:.1}%",
        est.eta_total() + eta_prime,
        100.0 * (est.eta_total() + eta_prime) / (j_val - 1.08704164)
    );
    println!("mine (recon)      = {:+.6e}", est.eta_micro_total());
    println!("true transported  = {:+.6e}", totals[0]);
    println!("A  4/3*(Fh-Fk)    = {:+.6e}", totals[1]);
    println!("B  (Fh-Fk)+rec(h) = {:+.6e}", totals[2]);
    println!("E  fine weights   = {:+.6e}", totals[3]);
    println!("Ta int fu.psi     = {:+.6e}", totals[4]);
    println!("Ta+Tb term2 full  = {:+.6e}", totals[5]);
    println!("Tc term1 full     = {:+.6e}", totals[6]);
    println!("NL J(u~)-J(uk)    = {:+.6e}", totals[7]);
}
