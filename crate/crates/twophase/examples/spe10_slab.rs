//! Generate synthetic permeability and porosity files in the SPE10 ASCII
//! layout, load a slab through the reader, and run a short flood on it.
//!
//! ```bash
//! cargo run --release --example spe10_slab
//! ```

use twophase::scenario::{load_scenario, PermSpec};
use twophase::sim::{run_simulation, SnapshotPolicy};
use twophase::spe10;

fn main() {
    let dir = std::env::temp_dir().join("twophase_spe10_example");
    std::fs::create_dir_all(&dir).expect("tmp dir");
    let perm_path = dir.join("synthetic_perm.dat");
    let poro_path = dir.join("synthetic_poro.dat");

    // a 60 x 20 x 2 synthetic dataset, lognormal with two orders of spread
    let dims = (60, 20, 2);
    spe10::write_lognormal_perm(&perm_path, dims, 200.0, 1.2, 77).expect("write perm");
    spe10::write_uniform_poro(&poro_path, dims, 0.2).expect("write poro");
    println!("wrote {} and {}", perm_path.display(), poro_path.display());

    // a scenario that reads a 40 x 10 slab out of the file
    let base = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios/het_lognormal_50x10.cfg");
    let mut scenario = load_scenario(&base).expect("load base scenario");
    scenario.grid.nx = 40;
    scenario.grid.ny = 10;
    scenario.rock.perm = PermSpec::Spe10 {
        perm_file: perm_path,
        poro_file: poro_path,
        file_dims: dims,
        origin: (10, 5, 1),
    };
    let problem = scenario.build().expect("build");

    let kx: Vec<f64> = problem.rock.perm.iter().map(|k| k[0]).collect();
    let (min, max) = kx.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &k| {
        (lo.min(k), hi.max(k))
    });
    println!(
        "slab loaded: {} cells, Kx in [{:.2}, {:.2}] mD",
        problem.grid.n_cells(),
        min / spe10::MILLIDARCY,
        max / spe10::MILLIDARCY
    );

    let result =
        run_simulation(&problem, &scenario.precond, &scenario.solver, SnapshotPolicy::None);
    let m = &result.metrics;
    println!(
        "run: NI {} LI {} LI/NI {:.2} converged {}",
        m.total_newton,
        m.total_linear,
        m.li_per_ni(),
        m.converged
    );
}
