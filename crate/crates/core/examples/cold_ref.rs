//! Scratch: resolved reference with a cold fast start (no pre-cycling).

use slowfast_core::{extrapolate, make_benchmark, solve_resolved, BenchmarkId, ResolvedOptions};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let id = if args.get(1).map(|s| s.as_str()) == Some("osc1") {
        BenchmarkId::Osc1
    } else {
        BenchmarkId::Osc2
    };
    let sys = make_benchmark(id, None);
    let opts = ResolvedOptions { precycle_tol: f64::INFINITY, ..ResolvedOptions::default() };
    let mut values = [0.0; 3];
    for (i, div) in [1.0, 2.0, 4.0].iter().enumerate() {
        let k = 0.01 / div;
        let t = std::time::Instant::now();
        let run = solve_resolved(&sys, k, &opts).unwrap();
        values[i] = run.terminal_slow[0];
        println!(
            "k={k:.6}  J={:.10}  precycles={}  ({:.1?})",
            values[i],
            run.precycles,
            t.elapsed()
        );
    }
    let ex = extrapolate(values);
    println!("order={:.4}  limit={:.10}  reliable={}", ex.order, ex.limit, ex.reliable);
}
