//! Run the two-dimensional oil-water flood end to end with one
//! preconditioner and print per-step counters plus the final water front
//! position along the bottom row.
//!
//! ```bash
//! cargo run --release --example quarter_spot -- [scenario.cfg] [method]
//! ```

use std::path::{Path, PathBuf};

use twophase::precond::PrecondMethod;
use twophase::scenario::load_scenario;
use twophase::sim::{run_simulation, SnapshotPolicy};

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/example1_linear.cfg")
    });
    let method = args
        .next()
        .and_then(|m| PrecondMethod::parse(&m))
        .unwrap_or(PrecondMethod::BlockFactorization);

    let mut scenario = load_scenario(&path).expect("failed to load scenario");
    scenario.precond.method = method;
    let problem = scenario.build().expect("failed to build problem");
    println!(
        "{}: {} cells, dt {} days, {} steps, method {}",
        path.file_name().unwrap().to_string_lossy(),
        problem.grid.n_cells(),
        problem.dt / 86400.0,
        (problem.t_final / problem.dt).round(),
        method.name()
    );

    let result =
        run_simulation(&problem, &scenario.precond, &scenario.solver, SnapshotPolicy::Final);
    println!("{:>5} {:>8} {:>6} {:>6} {:>9}", "step", "t(days)", "NI", "LI", "wall(s)");
    for s in &result.metrics.steps {
        println!(
            "{:>5} {:>8.1} {:>6} {:>6} {:>9.2}{}",
            s.step,
            s.t_end / 86400.0,
            s.newton_iterations,
            s.linear_iterations,
            s.wall_seconds,
            if s.cut { "  (dt cut)" } else { "" }
        );
    }
    let m = &result.metrics;
    println!(
        "totals: NI {} LI {} LI/NI {:.2} converged {} mass error [{:.2e}, {:.2e}]",
        m.total_newton,
        m.total_linear,
        m.li_per_ni(),
        m.converged,
        m.mass_balance_error[0],
        m.mass_balance_error[1]
    );

    // water saturation along the deepest row
    let g = &problem.grid;
    let j = g.ny - 1;
    print!("bottom-row water saturation: ");
    for i in (0..g.nx).step_by((g.nx / 10).max(1)) {
        let c = g.cell_index(i, j, 0);
        print!("{:.2} ", 1.0 - result.final_state.s_n[c]);
    }
    println!();
}
