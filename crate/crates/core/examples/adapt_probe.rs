use slowfast_core::{
    adapt_loop, estimate, make_benchmark, solve_macro, solve_macro_adjoint, total_effort,
    AdaptConfig, GoalFunctional, MacroMesh, MacroOptions, SlowFastSystem,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let target: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(5.0e-5);
    let j_ref = 0.59223654;

    let sys = make_benchmark("osc2".parse().unwrap(), None);
    let goal = GoalFunctional::terminal_component(0);
    let mesh0 = MacroMesh::uniform(sys.horizon(), 5.0e4, 0.05).unwrap();

    let config = AdaptConfig {
        beta: 1.2,
        max_iterations: 12,
        target_error: Some(target),
        ..AdaptConfig::default()
    };
    let t0 = std::time::Instant::now();
    let trace = adapt_loop(&sys, &mesh0, &goal, &config).unwrap();
    println!("adaptive loop: {:?} in {:.1?}", trace.stop, t0.elapsed());
    for (i, it) in trace.iterations.iter().enumerate() {
        let eg = it.breakdown.eta_macro_total();
        let ef = it.breakdown.eta_micro_total();
        let balance = ef.abs() / eg.abs();
        println!(
            "  sweep {i}: N={:3}  eta_EG={:+.3e} eta_EF={:+.3e} bal={:8.3} eta={:+.3e} err={:+.3e} effort={:.0}",
            it.mesh.interval_count(),
            eg,
            ef,
            balance,
            it.breakdown.eta_total(),
            it.goal_value - j_ref,
            it.effort,
        );
    }
    println!("cumulative effort = {:.0}", trace.cumulative_effort);
    let last = trace.last();
    println!(
        "final: err={:+.3e} eta={:+.3e} final-mesh effort={:.0}",
        last.goal_value - j_ref,
        last.breakdown.eta_total(),
        last.effort
    );

    // Uniform halving family from the same start.
    println!("uniform family:");
    for j in 0..5 {
        let f = f64::powi(2.0, j);
        let mesh = MacroMesh::uniform(sys.horizon(), 5.0e4 / f, 0.05 / f).unwrap();
        let t = std::time::Instant::now();
        let sol = solve_macro(&sys, &mesh, &MacroOptions::default()).unwrap();
        let adj = solve_macro_adjoint(&sys, &sol, &goal).unwrap();
        let est = estimate(&sys, &sol, &adj, &goal).unwrap();
        println!(
            "  j={j}: N={:4} k={:.5} err={:+.3e} eta={:+.3e} effort={:.0}  ({:.1?})",
            mesh.interval_count(),
            mesh.micro_step(0),
            sol.goal(&goal) - j_ref,
            est.eta_total(),
            total_effort(&mesh),
            t.elapsed()
        );
    }
}
