//! Eigenvalues of the right-preconditioned operator J M^-1 for the
//! two-stage and block-factorization preconditioners, with exact inner
//! solves. Writes one `re,im` CSV per method and prints the spectrum
//! envelope; the combinative method's cluster near the origin is the
//! signature this study looks for.
//!
//! ```bash
//! cargo run --release --example spectrum_study -- [scenario.cfg] [newton_index] [out_dir]
//! ```

use std::path::{Path, PathBuf};

use twophase::bench::dump_spectrum;
use twophase::precond::PrecondMethod;
use twophase::scenario::load_scenario;

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/het_advection_50x10.cfg")
    });
    let newton_index: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(2);
    let out_dir = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("spectra"));

    let scenario = load_scenario(&path).expect("failed to load scenario");
    println!(
        "spectra of J M^-1 at Newton iteration {newton_index} of {}",
        path.display()
    );
    println!("{:<10} {:>8} {:>12} {:>12}", "method", "n", "min |ev|", "max |ev|");
    for method in [
        PrecondMethod::CprAmg1,
        PrecondMethod::CprAmg2,
        PrecondMethod::BlockFactorization,
    ] {
        let out = out_dir.join(format!("{}.csv", method.name()));
        match dump_spectrum(&scenario, method, newton_index, &out) {
            Ok(summary) => println!(
                "{:<10} {:>8} {:>12.4e} {:>12.4e}   -> {}",
                summary.method,
                summary.n,
                summary.min_abs,
                summary.max_abs,
                out.display()
            ),
            Err(e) => println!("{:<10} failed: {e}", method.name()),
        }
    }
}
