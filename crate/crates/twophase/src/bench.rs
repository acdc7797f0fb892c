//! Benchmark orchestration: suites of (scenario, preconditioner) pairs with
//! CSV and JSON outputs in the NI / LI / LI-per-NI table shape, and the
//! eigenvalue dump for preconditioned-operator spectra.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Serialize;

use crate::discretize::{assemble_residual, assemble_system, BlockJacobian, UnknownOrdering};
use crate::error::{Error, Result};
use crate::precond::{build_preconditioner, PrecondMethod};
use crate::scenario::{load_scenario, Scenario};
use crate::sim::{newton_step, run_simulation, SnapshotPolicy, SolveMetrics};
use crate::sparse::{norm2, LinearOperator};
use crate::spectrum::dense_spectrum;

#[derive(Debug, Clone)]
pub struct BenchmarkSuite {
    pub name: String,
    /// (name, scenario) pairs crossed with every method below.
    pub scenarios: Vec<(String, Scenario)>,
    pub methods: Vec<PrecondMethod>,
    pub repetitions: usize,
}

impl BenchmarkSuite {
    pub fn cases(&self) -> impl Iterator<Item = (&str, &Scenario, PrecondMethod)> + '_ {
        self.scenarios.iter().flat_map(move |(name, scenario)| {
            self.methods.iter().map(move |&m| (name.as_str(), scenario, m))
        })
    }
}

/// Load a suite file: a `[suite]` section listing scenario files (relative to
/// the suite file) and methods.
pub fn load_suite(path: &Path) -> Result<BenchmarkSuite> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().map(|p| p.to_path_buf()).unwrap_or_default();
    let label = path.display().to_string();

    let mut name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "suite".into());
    let mut scenario_files: Vec<String> = Vec::new();
    let mut methods = Vec::new();
    let mut repetitions = 1usize;
    let mut in_suite = false;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line == "[suite]" {
            in_suite = true;
            continue;
        }
        if line.starts_with('[') {
            return Err(Error::Parse {
                path: label,
                line: line_no,
                message: format!("unknown section `{line}` in a suite file"),
            });
        }
        if !in_suite {
            return Err(Error::Parse {
                path: label,
                line: line_no,
                message: "suite files start with [suite]".into(),
            });
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: label.clone(),
            line: line_no,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        match key.trim() {
            "name" => name = value.trim().to_string(),
            "repetitions" => {
                repetitions = value.trim().parse().map_err(|_| Error::Parse {
                    path: label.clone(),
                    line: line_no,
                    message: "repetitions must be a positive integer".into(),
                })?
            }
            "scenarios" => {
                scenario_files =
                    value.split_whitespace().map(|s| s.to_string()).collect();
            }
            "methods" => {
                for word in value.split_whitespace() {
                    let m = PrecondMethod::parse(word).ok_or_else(|| Error::Parse {
                        path: label.clone(),
                        line: line_no,
                        message: format!("unknown method `{word}`"),
                    })?;
                    methods.push(m);
                }
            }
            other => {
                return Err(Error::Parse {
                    path: label,
                    line: line_no,
                    message: format!("unknown suite key `{other}`"),
                })
            }
        }
    }
    if repetitions == 0 {
        repetitions = 1;
    }

    let mut scenarios = Vec::new();
    for file in scenario_files {
        let scenario_path = base.join(&file);
        let stem = Path::new(&file)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or(file.clone());
        if scenarios.iter().any(|(n, _)| *n == stem) {
            return Err(Error::Validation(format!("duplicate scenario name `{stem}`")));
        }
        scenarios.push((stem, load_scenario(&scenario_path)?));
    }
    Ok(BenchmarkSuite { name, scenarios, methods, repetitions })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub scenario: String,
    pub method: String,
    pub repetition: usize,
    pub total_newton: usize,
    pub total_linear: usize,
    pub li_per_ni: f64,
    pub wall_seconds: f64,
    pub converged: bool,
    pub amg_operator_complexity: f64,
    pub failure: Option<String>,
    pub metrics: SolveMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub suite: String,
    pub rows: Vec<BenchRow>,
}

/// Run every case of the suite; failures become rows with
/// `converged = false` rather than aborting the sweep.
pub fn run_benchmark(suite: &BenchmarkSuite) -> BenchReport {
    let mut rows = Vec::new();
    for rep in 0..suite.repetitions.max(1) {
        for (name, scenario, method) in suite.cases() {
            let mut precond = scenario.precond;
            precond.method = method;
            let row = match scenario.build() {
                Ok(problem) => {
                    let result = run_simulation(
                        &problem,
                        &precond,
                        &scenario.solver,
                        SnapshotPolicy::None,
                    );
                    let m = &result.metrics;
                    BenchRow {
                        scenario: name.to_string(),
                        method: method.name().to_string(),
                        repetition: rep,
                        total_newton: m.total_newton,
                        total_linear: m.total_linear,
                        li_per_ni: m.li_per_ni(),
                        wall_seconds: m.wall_seconds,
                        converged: m.converged,
                        amg_operator_complexity: m
                            .amg
                            .first()
                            .map(|(_, s)| s.operator_complexity)
                            .unwrap_or(0.0),
                        failure: m.failure.clone(),
                        metrics: result.metrics,
                    }
                }
                Err(e) => BenchRow {
                    scenario: name.to_string(),
                    method: method.name().to_string(),
                    repetition: rep,
                    total_newton: 0,
                    total_linear: 0,
                    li_per_ni: 0.0,
                    wall_seconds: 0.0,
                    converged: false,
                    amg_operator_complexity: 0.0,
                    failure: Some(e.to_string()),
                    metrics: SolveMetrics {
                        steps: Vec::new(),
                        total_newton: 0,
                        total_linear: 0,
                        step_cut_count: 0,
                        wall_seconds: 0.0,
                        converged: false,
                        failure: Some(e.to_string()),
                        amg: Vec::new(),
                        mass_balance_error: [0.0; 2],
                    },
                },
            };
            rows.push(row);
        }
    }
    BenchReport { suite: suite.name.clone(), rows }
}

/// Format with six significant digits, the CSV convention.
fn sig6(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else {
        format!("{x:.5e}")
    }
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scenario,method,NI,LI,LI_per_NI,wall_seconds,converged,amg_operator_complexity\n",
        );
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.scenario,
                r.method,
                r.total_newton,
                r.total_linear,
                sig6(r.li_per_ni),
                sig6(r.wall_seconds),
                r.converged,
                sig6(r.amg_operator_complexity),
            )
            .unwrap();
        }
        out
    }

    pub fn write_outputs(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.csv", self.suite));
        let json_path = dir.join(format!("{}.json", self.suite));
        std::fs::write(&csv_path, self.to_csv())?;
        std::fs::write(&json_path, serde_json::to_string_pretty(self).expect("serialize"))?;
        Ok((csv_path, json_path))
    }
}

/// The coupled Jacobian at a given Newton iteration of the first time step
/// (index 0 is the initial state). The Newton path is reproduced with exact
/// linear solves, which matches any converging preconditioner's path at the
/// configured linear tolerance.
pub fn jacobian_at_newton_iteration(
    scenario: &Scenario,
    newton_index: usize,
) -> Result<BlockJacobian> {
    let problem = scenario.build()?;
    let inputs = problem.inputs();
    let ordering = UnknownOrdering::PointInterleaved;
    let n = problem.grid.n_cells();
    let mut state = problem.initial.clone();
    for _ in 0..newton_index {
        let (residual, jac) =
            assemble_system(&inputs, &state, &problem.initial, problem.dt, ordering)?;
        let norm = norm2(&residual);
        if norm <= scenario.solver.abs_tol {
            break;
        }
        // tight block-factorization solve; the Newton path at this
        // tolerance is independent of the preconditioner choice
        let mut spec = scenario.precond;
        spec.method = PrecondMethod::BlockFactorization;
        let scale = jac.pressure_column_scale();
        let scaled = jac.scale_pressure_columns(scale);
        let m = build_preconditioner(&spec, &scaled)?;
        let rhs: Vec<f64> = residual.iter().map(|v| -v).collect();
        let params = crate::gmres::GmresParams {
            rel_tol: scenario.solver.linear_rel_tol,
            max_iters: scenario.solver.linear_max_iters.max(4000),
            restart: scenario.solver.restart,
        };
        let (mut delta, stats) = crate::gmres::gmres(scaled.coupled(), &rhs, &m, &params);
        if !stats.converged {
            return Err(Error::LinearSolveFailed {
                step: 0,
                newton: 0,
                iterations: stats.iterations,
                relative_residual: stats.final_relative_residual,
                stats,
            });
        }
        for c in 0..n {
            delta[ordering.p_index(c, n)] *= scale;
        }
        let apply = |state: &crate::discretize::State, alpha: f64| {
            let mut out = state.clone();
            for c in 0..n {
                out.p_w[c] += alpha * delta[ordering.p_index(c, n)];
                out.s_n[c] += alpha * delta[ordering.s_index(c, n)];
            }
            out
        };
        // follow the same globalization as the production Newton loop
        let mut alpha = 1.0;
        if scenario.solver.line_search {
            while alpha >= 1.0 / 64.0 {
                let trial = apply(&state, alpha);
                let r =
                    assemble_residual(&inputs, &trial, &problem.initial, problem.dt, ordering)?;
                if norm2(&r) <= (1.0 - 1e-4 * alpha) * norm {
                    break;
                }
                alpha *= 0.5;
            }
            alpha = alpha.max(1.0 / 64.0);
        }
        state = apply(&state, alpha);
    }
    let (_, jac) =
        assemble_system(&inputs, &state, &problem.initial, problem.dt, ordering)?;
    Ok(jac)
}

/// y = J (M^-1 x): the right-preconditioned operator whose spectrum the
/// study examines.
pub struct PreconditionedOperator<'a> {
    pub jacobian: &'a dyn LinearOperator,
    pub m_inv: &'a dyn LinearOperator,
}

impl LinearOperator for PreconditionedOperator<'_> {
    fn dim(&self) -> usize {
        self.jacobian.dim()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let z = self.m_inv.apply(x);
        self.jacobian.apply_into(&z, y);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumSummary {
    pub method: String,
    pub n: usize,
    pub min_abs: f64,
    pub max_abs: f64,
}

/// Eigenvalues of J M^-1 with exact inner solves, captured at the given
/// Newton iteration of the first time step.
pub fn preconditioned_spectrum(
    scenario: &Scenario,
    method: PrecondMethod,
    newton_index: usize,
) -> Result<(Vec<Complex64>, SpectrumSummary)> {
    let jac = jacobian_at_newton_iteration(scenario, newton_index)?;
    // the equilibration the solver applies; a pure similarity for the block
    // and two-stage preconditioners with exact inner solves
    let scaled = jac.scale_pressure_columns(jac.pressure_column_scale());
    let mut spec = scenario.precond;
    spec.method = method;
    spec.exact_inner = true;
    let m = build_preconditioner(&spec, &scaled)?;
    let op = PreconditionedOperator { jacobian: scaled.coupled(), m_inv: &m };
    let eigs = dense_spectrum(&op)?;
    let min_abs = eigs.iter().map(|e| e.norm()).fold(f64::INFINITY, f64::min);
    let max_abs = eigs.iter().map(|e| e.norm()).fold(0.0f64, f64::max);
    let summary = SpectrumSummary {
        method: method.name().to_string(),
        n: eigs.len(),
        min_abs,
        max_abs,
    };
    Ok((eigs, summary))
}

/// Run the spectrum study and write a `re,im` CSV.
pub fn dump_spectrum(
    scenario: &Scenario,
    method: PrecondMethod,
    newton_index: usize,
    out_path: &Path,
) -> Result<SpectrumSummary> {
    let (eigs, summary) = preconditioned_spectrum(scenario, method, newton_index)?;
    let mut text = String::from("re,im\n");
    for e in &eigs {
        writeln!(text, "{:?},{:?}", e.re, e.im).unwrap();
    }
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out_path, text)?;
    Ok(summary)
}

/// Final state as a CSV of cell coordinates and unknowns.
pub fn state_to_csv(problem: &crate::sim::Problem, state: &crate::discretize::State) -> String {
    let mut out = String::from("cell,i,j,k,p_w,s_n\n");
    for c in 0..problem.grid.n_cells() {
        let (i, j, k) = problem.grid.cell_coords(c);
        writeln!(out, "{},{},{},{},{:?},{:?}", c, i, j, k, state.p_w[c], state.s_n[c])
            .unwrap();
    }
    out
}

/// Newton residual norms of the first time step, for convergence displays.
pub fn first_step_residual_norms(
    scenario: &Scenario,
    method: PrecondMethod,
) -> Result<Vec<f64>> {
    let problem = scenario.build()?;
    let mut spec = scenario.precond;
    spec.method = method;
    let report = newton_step(
        &problem,
        &problem.initial,
        problem.dt,
        &spec,
        &scenario.solver,
        0,
    )?;
    Ok(report.residual_norms)
}
