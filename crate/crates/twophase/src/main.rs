//! Command-line front end: run scenarios, sweep benchmark suites, dump
//! preconditioned spectra, and validate configuration files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use twophase::bench::{dump_spectrum, load_suite, run_benchmark, state_to_csv};
use twophase::error::Error;
use twophase::precond::PrecondMethod;
use twophase::scenario::{load_scenario, Scenario};
use twophase::sim::{run_simulation, SnapshotPolicy};

const USAGE: &str = "\
usage:
  twophase run <scenario.cfg> [--method <amg|cpr-amg1|cpr-amg2|bf|exact>] [--out <dir>]
  twophase bench <suite.cfg> [--out <dir>]
  twophase spectrum <scenario.cfg> --method <m> --newton <k> [--out <file>]
  twophase validate <scenario.cfg>

exit codes: 0 success, 2 validation/parse failure, 3 solver failure.
The TWOPHASE_OUTPUT_DIR environment variable overrides the output directory.";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(verb) = args.first() else {
        eprintln!("{USAGE}");
        return ExitCode::from(2);
    };
    match verb.as_str() {
        "run" => cmd_run(&args[1..]),
        "bench" => cmd_bench(&args[1..]),
        "spectrum" => cmd_spectrum(&args[1..]),
        "validate" => cmd_validate(&args[1..]),
        "--help" | "-h" | "help" => {
            println!("{USAGE}");
            ExitCode::SUCCESS
        }
        other => {
            eprintln!("unknown command `{other}`\n{USAGE}");
            ExitCode::from(2)
        }
    }
}

struct Flags {
    positional: Vec<String>,
    method: Option<String>,
    newton: Option<usize>,
    out: Option<PathBuf>,
}

fn parse_flags(args: &[String]) -> Result<Flags, String> {
    let mut flags =
        Flags { positional: Vec::new(), method: None, newton: None, out: None };
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--method" => {
                flags.method =
                    Some(it.next().ok_or("--method needs a value")?.clone());
            }
            "--newton" => {
                let v = it.next().ok_or("--newton needs a value")?;
                flags.newton = Some(v.parse().map_err(|_| "--newton expects an integer")?);
            }
            "--out" => {
                flags.out = Some(PathBuf::from(it.next().ok_or("--out needs a value")?));
            }
            other if other.starts_with("--") => {
                return Err(format!("unknown flag `{other}`"));
            }
            other => flags.positional.push(other.to_string()),
        }
    }
    Ok(flags)
}

fn output_dir(flag: &Option<PathBuf>, scenario: Option<&Scenario>) -> PathBuf {
    if let Ok(env) = std::env::var("TWOPHASE_OUTPUT_DIR") {
        return PathBuf::from(env);
    }
    if let Some(dir) = flag {
        return dir.clone();
    }
    if let Some(dir) = scenario.and_then(|s| s.output_dir.clone()) {
        return dir;
    }
    PathBuf::from("out")
}

fn fail(code: u8, err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code)
}

fn load_or_exit(path: &str) -> Result<Scenario, ExitCode> {
    match load_scenario(Path::new(path)) {
        Ok(s) => Ok(s),
        Err(e) => {
            eprintln!("error: {e}");
            Err(ExitCode::from(2))
        }
    }
}

fn cmd_run(args: &[String]) -> ExitCode {
    let flags = match parse_flags(args) {
        Ok(f) => f,
        Err(e) => return fail(2, e),
    };
    let [path] = flags.positional.as_slice() else {
        return fail(2, "run expects exactly one scenario file");
    };
    let mut scenario = match load_or_exit(path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if let Some(m) = &flags.method {
        match PrecondMethod::parse(m) {
            Some(method) => scenario.precond.method = method,
            None => return fail(2, format!("unknown method `{m}`")),
        }
    }
    let problem = match scenario.build() {
        Ok(p) => p,
        Err(e) => return fail(2, e),
    };
    let result =
        run_simulation(&problem, &scenario.precond, &scenario.solver, SnapshotPolicy::Final);
    let m = &result.metrics;
    println!(
        "method {}: NI {} LI {} LI/NI {:.2} wall {:.2}s converged {}",
        scenario.precond.method.name(),
        m.total_newton,
        m.total_linear,
        m.li_per_ni(),
        m.wall_seconds,
        m.converged
    );
    for (name, stats) in &m.amg {
        println!(
            "  amg[{name}]: {} levels, operator complexity {:.2}",
            stats.levels, stats.operator_complexity
        );
    }
    if let Some(f) = &m.failure {
        println!("  failure: {f}");
    }

    let dir = output_dir(&flags.out, Some(&scenario));
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return fail(3, e);
    }
    let stem = Path::new(path).file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let json = serde_json::to_string_pretty(&m).expect("serialize metrics");
    if let Err(e) = std::fs::write(dir.join(format!("{stem}_metrics.json")), json) {
        return fail(3, e);
    }
    if let Err(e) =
        std::fs::write(dir.join(format!("{stem}_final_state.csv")), state_to_csv(&problem, &result.final_state))
    {
        return fail(3, e);
    }
    println!("wrote {}/{{{stem}_metrics.json, {stem}_final_state.csv}}", dir.display());
    if m.converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}

fn cmd_bench(args: &[String]) -> ExitCode {
    let flags = match parse_flags(args) {
        Ok(f) => f,
        Err(e) => return fail(2, e),
    };
    let [path] = flags.positional.as_slice() else {
        return fail(2, "bench expects exactly one suite file");
    };
    let suite = match load_suite(Path::new(path)) {
        Ok(s) => s,
        Err(e @ (Error::Parse { .. } | Error::Validation(_))) => return fail(2, e),
        Err(e) => return fail(2, e),
    };
    let report = run_benchmark(&suite);
    print!("{}", report.to_csv());
    let dir = output_dir(&flags.out, None);
    match report.write_outputs(&dir) {
        Ok((csv, json)) => {
            println!("wrote {} and {}", csv.display(), json.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(3, e),
    }
}

fn cmd_spectrum(args: &[String]) -> ExitCode {
    let flags = match parse_flags(args) {
        Ok(f) => f,
        Err(e) => return fail(2, e),
    };
    let [path] = flags.positional.as_slice() else {
        return fail(2, "spectrum expects exactly one scenario file");
    };
    let Some(method_name) = &flags.method else {
        return fail(2, "spectrum needs --method");
    };
    let Some(method) = PrecondMethod::parse(method_name) else {
        return fail(2, format!("unknown method `{method_name}`"));
    };
    let newton = flags.newton.unwrap_or(0);
    let scenario = match load_or_exit(path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let stem = Path::new(path).file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let out = match &flags.out {
        Some(p) if p.extension().is_some() => p.clone(),
        _ => output_dir(&flags.out, Some(&scenario))
            .join(format!("{stem}_{}_newton{newton}.csv", method.name())),
    };
    match dump_spectrum(&scenario, method, newton, &out) {
        Ok(summary) => {
            println!(
                "{}: {} eigenvalues, |ev| in [{:.4e}, {:.4e}] -> {}",
                summary.method,
                summary.n,
                summary.min_abs,
                summary.max_abs,
                out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(3, e),
    }
}

fn cmd_validate(args: &[String]) -> ExitCode {
    let flags = match parse_flags(args) {
        Ok(f) => f,
        Err(e) => return fail(2, e),
    };
    let [path] = flags.positional.as_slice() else {
        return fail(2, "validate expects exactly one scenario file");
    };
    match load_scenario(Path::new(path)).and_then(|s| s.build()) {
        Ok(problem) => {
            println!(
                "{path}: valid ({} cells, {} boundary faces, dt {:.3} days, {} steps)",
                problem.grid.n_cells(),
                problem.grid.boundary_faces().len(),
                problem.dt / 86400.0,
                (problem.t_final / problem.dt).round() as usize
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(2, e),
    }
}
