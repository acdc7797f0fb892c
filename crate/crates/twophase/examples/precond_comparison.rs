//! Compare the four preconditioning strategies on one scenario and print an
//! NI / LI / LI-per-NI table.
//!
//! ```bash
//! cargo run --release --example precond_comparison -- [scenario.cfg]
//! ```
//!
//! Without an argument this runs a desk-scale version of the heterogeneous
//! oil-water flood. Set SHOW_STEPS=1 to print per-step counters.

use std::path::{Path, PathBuf};

use twophase::precond::PrecondMethod;
use twophase::scenario::load_scenario;
use twophase::sim::{run_simulation, SnapshotPolicy};

fn main() {
    let arg = std::env::args().nth(1);
    let path = arg.map(PathBuf::from).unwrap_or_else(|| {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/het_lognormal_50x10.cfg")
    });
    let scenario = load_scenario(&path).expect("failed to load scenario");
    println!("scenario: {}", path.display());
    println!("{:<10} {:>6} {:>8} {:>8} {:>9} {:>11}", "method", "NI", "LI", "LI/NI", "time(s)", "converged");

    for method in [
        PrecondMethod::CoupledAmg,
        PrecondMethod::CprAmg1,
        PrecondMethod::CprAmg2,
        PrecondMethod::BlockFactorization,
    ] {
        let problem = scenario.build().expect("failed to build problem");
        let mut precond = scenario.precond;
        precond.method = method;
        let result = run_simulation(&problem, &precond, &scenario.solver, SnapshotPolicy::None);
        let m = &result.metrics;
        if std::env::var("SHOW_STEPS").is_ok() {
            for s in &m.steps {
                println!(
                    "    step {}: NI={} LI={} (LI/NI {:.1})",
                    s.step,
                    s.newton_iterations,
                    s.linear_iterations,
                    s.linear_iterations as f64 / s.newton_iterations.max(1) as f64
                );
            }
        }
        println!(
            "{:<10} {:>6} {:>8} {:>8.1} {:>9.2} {:>11}{}",
            method.name(),
            m.total_newton,
            m.total_linear,
            m.li_per_ni(),
            m.wall_seconds,
            m.converged,
            match &m.failure {
                Some(f) => format!("  ({f})"),
                None => String::new(),
            }
        );
    }
}
