use slowfast_core::estimator::{estimate, estimate_adjoint_conformity};
use slowfast_core::{
    make_benchmark, solve_macro, solve_macro_adjoint, GoalFunctional, MacroMesh, MacroOptions,
    OrbitOptions, SlowFastSystem,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let big_k: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1.0e5);
    let small_k: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let problem = args.get(3).map(String::as_str).unwrap_or("osc1");
    let reference: f64 = args
        .get(4)
        .map(|s| s.parse().unwrap())
        .unwrap_or(if problem == "osc1" { 1.08704164 } else { 0.59223654 });

    let id = problem.parse().unwrap();
    let sys = make_benchmark(id, None);
    let goal = GoalFunctional::terminal_component(0);
    let mesh = MacroMesh::uniform(sys.horizon(), big_k, small_k).unwrap();
    let t0 = std::time::Instant::now();
    let sol = solve_macro(&sys, &mesh, &MacroOptions::default()).unwrap();
    let t1 = std::time::Instant::now();
    let adj = solve_macro_adjoint(&sys, &sol, &goal).unwrap();
    let t2 = std::time::Instant::now();
    let breakdown = estimate(&sys, &sol, &adj, &goal).unwrap();
    let t3 = std::time::Instant::now();
    let eta_adj = estimate_adjoint_conformity(&sys, &sol, &adj, &OrbitOptions::default()).unwrap();
    let t4 = std::time::Instant::now();

    let j = sol.goal(&goal);
    let err = j - reference;
    let b = breakdown.with_adjoint_conformity(eta_adj);
    println!("J        = {j:.8}");
    println!("err      = {err:+.6e}");
    println!("eta_EG   = {:+.6e}", b.eta_macro_total());
    println!("eta_EF   = {:+.6e}", b.eta_micro_total());
    println!("eta_EF'  = {:+.6e}", b.eta_adjoint);
    println!("eta      = {:+.6e}", b.eta_total());
    println!("eff      = {:.1}%", b.effectivity(err).unwrap());
    println!("defect max = {:.3e}  cycles max = {}", sol.max_defect, sol.max_cycles);
    println!(
        "timing: solve {:?}  adjoint {:?}  estimate {:?}  conformity {:?}",
        t1 - t0,
        t2 - t1,
        t3 - t2,
        t4 - t3
    );
}
