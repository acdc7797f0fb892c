//! Newton convergence on one backward-Euler step: residual norms per
//! iteration, showing the quadratic tail of the exact-Jacobian iteration.
//!
//! ```bash
//! cargo run --release --example newton_convergence -- [scenario.cfg]
//! ```

use std::path::{Path, PathBuf};

use twophase::bench::first_step_residual_norms;
use twophase::precond::PrecondMethod;
use twophase::scenario::load_scenario;

fn main() {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/gravity_diffusion_20.cfg")
    });
    let scenario = load_scenario(&path).expect("failed to load scenario");
    println!("first time step of {}", path.display());

    let norms = first_step_residual_norms(&scenario, PrecondMethod::BlockFactorization)
        .expect("newton step failed");
    println!("{:>5} {:>14} {:>12}", "iter", "||F||", "ratio");
    for (k, w) in norms.windows(2).enumerate() {
        println!("{:>5} {:>14.6e} {:>12.3e}", k, w[0], w[1] / w[0]);
    }
    println!("{:>5} {:>14.6e}", norms.len() - 1, norms.last().unwrap());
}
