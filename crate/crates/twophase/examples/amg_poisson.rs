//! Grid-independence of the multigrid preconditioner: V-cycle-preconditioned
//! GMRES on the 5-point Poisson problem across a sequence of mesh sizes.
//!
//! ```bash
//! cargo run --release --example amg_poisson -- [max_n]
//! ```

use twophase::gmres::{gmres, GmresParams};
use twophase::precond::{amg_setup, AmgParams};
use twophase::sparse::poisson_2d;

fn main() {
    let max_n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(128);
    println!("{:>7} {:>9} {:>7} {:>7} {:>11} {:>8}", "mesh", "unknowns", "levels", "iters", "complexity", "time(s)");
    let mut n = 32;
    while n <= max_n {
        let start = std::time::Instant::now();
        let a = poisson_2d(n, n);
        let h = amg_setup(&a, &AmgParams::default()).expect("setup");
        let b = vec![1.0; a.n_rows()];
        let params = GmresParams { rel_tol: 1e-10, max_iters: 200, restart: 200 };
        let (_, stats) = gmres(&a, &b, &h, &params);
        assert!(stats.converged, "solve failed at mesh {n}");
        println!(
            "{:>4}^2 {:>9} {:>7} {:>7} {:>11.2} {:>8.2}",
            n,
            a.n_rows(),
            h.stats().levels,
            stats.iterations,
            h.stats().operator_complexity,
            start.elapsed().as_secs_f64()
        );
        n *= 2;
    }
}
