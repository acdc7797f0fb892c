//! Time-step sensitivity on the advection-dominated gravity flood: Newton
//! iterations per step and linear iterations per Newton step for a fixed
//! final time as dt grows.
//!
//! ```bash
//! cargo run --release --example time_step_study -- [mesh]
//! ```

use twophase::precond::PrecondMethod;
use twophase::scenario::load_scenario;
use twophase::sim::{run_simulation, SnapshotPolicy};

fn main() {
    let mesh: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(80);
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios/gravity_advection_80.cfg");
    let base = load_scenario(&path).expect("failed to load scenario");
    let day = 86400.0;

    println!("mesh {mesh} x {mesh}, final time 8 days");
    println!("{:<10} {:>14} {:>8} {:>8}", "method", "dt(days)", "NI/TS", "LI/NI");
    for method in [PrecondMethod::CprAmg1, PrecondMethod::CprAmg2, PrecondMethod::BlockFactorization]
    {
        for dt_days in [1.0, 2.0, 4.0, 8.0] {
            let mut scenario = base.clone();
            scenario.grid.nx = mesh;
            scenario.grid.ny = mesh;
            scenario.dt = dt_days * day;
            scenario.t_final = 8.0 * day;
            scenario.precond.method = method;
            let problem = scenario.build().expect("build");
            let result = run_simulation(
                &problem,
                &scenario.precond,
                &scenario.solver,
                SnapshotPolicy::None,
            );
            let m = &result.metrics;
            if m.converged {
                println!(
                    "{:<10} {:>14.1} {:>8.2} {:>8.1}",
                    method.name(),
                    dt_days,
                    m.ni_per_step(),
                    m.li_per_ni()
                );
            } else {
                println!("{:<10} {:>14.1} {:>8} {:>8}", method.name(), dt_days, "-", "-");
            }
        }
    }
}
