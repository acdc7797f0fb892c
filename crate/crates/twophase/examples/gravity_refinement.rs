//! Mesh-refinement study on the homogeneous gravity flood: LI/NI per method
//! across a sequence of uniformly refined meshes. The block factorization
//! is expected to hold its iteration count while the combinative two-stage
//! method degrades with resolution.
//!
//! ```bash
//! cargo run --release --example gravity_refinement -- [max_mesh]
//! ```

use twophase::precond::PrecondMethod;
use twophase::scenario::{load_scenario, Scenario};
use twophase::sim::{run_simulation, SnapshotPolicy};

fn refined(base: &Scenario, n: usize) -> Scenario {
    let mut s = base.clone();
    let factor = n / base.grid.nx;
    s.grid.nx = n;
    s.grid.ny = n;
    // keep the inlet and outlet segments at fixed physical extent
    for bc in s.bcs.iter_mut() {
        for w in bc.window.iter_mut() {
            if let Some((lo, hi)) = w {
                *w = Some((*lo * factor, (*hi + 1) * factor - 1));
            }
        }
    }
    s
}

fn main() {
    let max_mesh: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(80);
    let path = std::env::args()
        .nth(2)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| {
            std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
                .join("scenarios/gravity_diffusion_20.cfg")
        });
    let base = load_scenario(&path).expect("failed to load scenario");

    let mut meshes = vec![20];
    while *meshes.last().unwrap() * 2 <= max_mesh {
        meshes.push(meshes.last().unwrap() * 2);
    }
    println!("{:<10} {}", "method", meshes.iter().map(|m| format!("{m:>9}")).collect::<String>());

    for method in [
        PrecondMethod::CoupledAmg,
        PrecondMethod::CprAmg1,
        PrecondMethod::CprAmg2,
        PrecondMethod::BlockFactorization,
    ] {
        print!("{:<10}", method.name());
        for &m in &meshes {
            let scenario = refined(&base, m);
            let problem = scenario.build().expect("build");
            let mut precond = scenario.precond;
            precond.method = method;
            let result =
                run_simulation(&problem, &precond, &scenario.solver, SnapshotPolicy::None);
            if result.metrics.converged {
                print!("{:>10.1}", result.metrics.li_per_ni());
            } else {
                print!("{:>10}", "-");
            }
        }
        println!();
    }
}
