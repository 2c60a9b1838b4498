//! Scratch: FD-vs-tangent truncation study at one anchor.

use nalgebra::DVector;
use slowfast_core::*;

fn main() {
    let sys = make_benchmark(BenchmarkId::Osc2, None);
    let grid = MicroGrid::new(0.0125).unwrap();
    let opts = OrbitOptions { periodicity_tol: 1e-12, max_cycles: 5000, ..Default::default() };
    let y = 0.55;
    let anchor = DVector::from_vec(vec![y]);
    let orbit = solve_periodic(&sys, &anchor, &grid, &opts, None).unwrap();
    let tangent = solve_tangent(&sys, &orbit).unwrap();
    let grad = transfer_grad_full(&sys, &orbit, &tangent)[(0, 0)];
    println!("analytic dF/dY at {y}: {grad:.10e}");
    for delta in [1e-4, 5e-5, 2.5e-5, 1.25e-5] {
        let p = solve_periodic(&sys, &DVector::from_vec(vec![y + delta]), &grid, &opts, Some(&orbit)).unwrap();
        let m = solve_periodic(&sys, &DVector::from_vec(vec![y - delta]), &grid, &opts, Some(&orbit)).unwrap();
        let fd = (transfer(&sys, &p)[0] - transfer(&sys, &m)[0]) / (2.0 * delta);
        println!("delta={delta:.2e}: fd={fd:.10e}  diff={:+.3e}  rel={:.2e}", fd - grad, (fd - grad).abs() / grad.abs());
    }
}
