//! Time-stepping driver: backward-Euler outer loop and Newton iteration with
//! the exact Jacobian. The preconditioner, including ILU(0) factors and AMG
//! hierarchies, is rebuilt from the current Jacobian at every Newton
//! iteration. Iteration counters follow the NI / LI / LI-per-NI convention.

use std::time::Instant;

use serde::Serialize;

use crate::discretize::{
    assemble_residual, assemble_system, mass_balance, AssemblyInputs, BoundaryConditionSet,
    SourceTerm, State, UnknownOrdering,
};
use crate::error::{Error, Result};
use crate::gmres::{gmres, GmresParams};
use crate::grid::Grid;
use crate::precond::{build_preconditioner, AmgStats, PreconditionerSpec};
use crate::rockfluid::{CapillaryModel, FluidProps, RelPermModel, RockProps};
use crate::sparse::norm2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonParams {
    /// Absolute bound on ||F||_2.
    pub abs_tol: f64,
    pub max_newton: usize,
    pub linear_rel_tol: f64,
    pub linear_max_iters: usize,
    pub restart: usize,
    /// Optional backtracking line search (off by default; the solver runs
    /// plain Newton with an exact Jacobian).
    pub line_search: bool,
}

impl Default for NewtonParams {
    fn default() -> Self {
        Self {
            abs_tol: 1e-6,
            max_newton: 50,
            linear_rel_tol: 1e-12,
            linear_max_iters: 2000,
            restart: 200,
            line_search: false,
        }
    }
}

impl NewtonParams {
    fn gmres_params(&self) -> GmresParams {
        GmresParams {
            rel_tol: self.linear_rel_tol,
            max_iters: self.linear_max_iters,
            restart: self.restart,
        }
    }
}

/// A fully specified transient problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: Grid,
    pub rock: RockProps,
    pub fluid: FluidProps,
    pub capillary: CapillaryModel,
    pub relperm: RelPermModel,
    pub bc: BoundaryConditionSet,
    pub src: SourceTerm,
    pub initial: State,
    /// Time step (s).
    pub dt: f64,
    /// Final time (s).
    pub t_final: f64,
}

impl Problem {
    pub fn inputs(&self) -> AssemblyInputs<'_> {
        AssemblyInputs {
            grid: &self.grid,
            rock: &self.rock,
            fluid: &self.fluid,
            capillary: &self.capillary,
            relperm: &self.relperm,
            bc: &self.bc,
            src: &self.src,
        }
    }

    /// Total phase mass [wetting, non-wetting] in place (kg).
    pub fn phase_mass(&self, state: &State) -> [f64; 2] {
        let v = self.grid.cell_volume();
        let mut mass = [0.0; 2];
        for i in 0..self.grid.n_cells() {
            let phi = self.rock.porosity[i];
            mass[0] += v * phi * self.fluid.rho_w * (1.0 - state.s_n[i]);
            mass[1] += v * phi * self.fluid.rho_n * state.s_n[i];
        }
        mass
    }
}

/// Outcome of one Newton solve.
#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub state: State,
    pub newton_iterations: usize,
    pub linear_iterations: usize,
    /// ||F|| before each iteration plus the final norm.
    pub residual_norms: Vec<f64>,
    pub amg: Vec<(&'static str, AmgStats)>,
}

/// Solve one backward-Euler step with Newton's method. `step_index` is only
/// used for error reporting.
pub fn newton_step(
    problem: &Problem,
    state_old: &State,
    dt: f64,
    precond: &PreconditionerSpec,
    params: &NewtonParams,
    step_index: usize,
) -> Result<NewtonReport> {
    let inputs = problem.inputs();
    let ordering = UnknownOrdering::PointInterleaved;
    let mut state = state_old.clone();
    let mut report = NewtonReport {
        state: state.clone(),
        newton_iterations: 0,
        linear_iterations: 0,
        residual_norms: Vec::new(),
        amg: Vec::new(),
    };

    loop {
        let residual = assemble_residual(&inputs, &state, state_old, dt, ordering)?;
        let norm = norm2(&residual);
        report.residual_norms.push(norm);
        if !norm.is_finite() {
            return Err(Error::NewtonDiverged {
                step: step_index,
                reason: "non-finite residual".into(),
            });
        }
        if norm <= params.abs_tol {
            report.state = state;
            return Ok(report);
        }
        if report.newton_iterations >= params.max_newton {
            return Err(Error::NewtonDiverged {
                step: step_index,
                reason: format!(
                    "{} iterations without reaching ||F|| <= {:.1e} (||F|| = {:.3e})",
                    params.max_newton, params.abs_tol, norm
                ),
            });
        }

        let (_, jacobian) = assemble_system(&inputs, &state, state_old, dt, ordering)?;
        // equilibrate the pressure columns for the coupled solve; ILU and
        // the block preconditioners commute with this scaling, the coupled
        // point-AMG needs it for a meaningful strength graph
        let p_scale = jacobian.pressure_column_scale();
        let scaled = jacobian.scale_pressure_columns(p_scale);
        let m = build_preconditioner(precond, &scaled)?;
        report.amg = m.amg_stats();
        let rhs: Vec<f64> = residual.iter().map(|v| -v).collect();
        let (mut delta, stats) = gmres(scaled.coupled(), &rhs, &m, &params.gmres_params());
        let n = state.n_cells();
        for c in 0..n {
            delta[ordering.p_index(c, n)] *= p_scale;
        }
        report.linear_iterations += stats.iterations;
        if !stats.converged {
            return Err(Error::LinearSolveFailed {
                step: step_index,
                newton: report.newton_iterations,
                iterations: stats.iterations,
                relative_residual: stats.final_relative_residual,
                stats,
            });
        }

        let mut alpha = 1.0;
        if params.line_search {
            // backtrack until the residual norm actually decreases
            let mut accepted = false;
            while alpha >= 1.0 / 64.0 {
                let trial = updated(&state, &delta, alpha);
                let r = assemble_residual(&inputs, &trial, state_old, dt, ordering)?;
                if norm2(&r) <= (1.0 - 1e-4 * alpha) * norm {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                alpha = 1.0 / 64.0;
            }
        }
        state = updated(&state, &delta, alpha);
        report.newton_iterations += 1;
    }
}

fn updated(state: &State, delta: &[f64], alpha: f64) -> State {
    let n = state.n_cells();
    let ordering = UnknownOrdering::PointInterleaved;
    let mut out = state.clone();
    for c in 0..n {
        out.p_w[c] += alpha * delta[ordering.p_index(c, n)];
        out.s_n[c] += alpha * delta[ordering.s_index(c, n)];
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    /// End time of the step (s).
    pub t_end: f64,
    pub dt: f64,
    pub newton_iterations: usize,
    pub linear_iterations: usize,
    pub wall_seconds: f64,
    /// True when this step had to be retried at dt/2.
    pub cut: bool,
}

/// Per-run counters in the reservoir-benchmark table conventions: NI and LI are totals
/// over all Newton solves, LI/NI their ratio.
#[derive(Debug, Clone, Serialize)]
pub struct SolveMetrics {
    pub steps: Vec<StepMetrics>,
    pub total_newton: usize,
    pub total_linear: usize,
    pub step_cut_count: usize,
    pub wall_seconds: f64,
    pub converged: bool,
    pub failure: Option<String>,
    /// AMG hierarchy statistics from the last built preconditioner.
    pub amg: Vec<(String, AmgStats)>,
    /// Relative per-phase mass-balance closure over the run.
    pub mass_balance_error: [f64; 2],
}

impl SolveMetrics {
    pub fn li_per_ni(&self) -> f64 {
        if self.total_newton == 0 {
            0.0
        } else {
            self.total_linear as f64 / self.total_newton as f64
        }
    }

    pub fn ni_per_step(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.total_newton as f64 / self.steps.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotPolicy {
    None,
    Final,
    EverySteps(usize),
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: SolveMetrics,
    pub final_state: State,
    /// (time, state) pairs per the snapshot policy.
    pub snapshots: Vec<(f64, State)>,
}

/// Advance the problem from t = 0 to t_final with fixed steps. A failed step
/// is retried once as two half steps; a second failure aborts the run with
/// partial metrics and `converged = false`.
pub fn run_simulation(
    problem: &Problem,
    precond: &PreconditionerSpec,
    params: &NewtonParams,
    snapshots: SnapshotPolicy,
) -> RunResult {
    let run_start = Instant::now();
    let mut state = problem.initial.clone();
    let mut metrics = SolveMetrics {
        steps: Vec::new(),
        total_newton: 0,
        total_linear: 0,
        step_cut_count: 0,
        wall_seconds: 0.0,
        converged: true,
        failure: None,
        amg: Vec::new(),
        mass_balance_error: [0.0; 2],
    };
    let mut recorded = Vec::new();
    let initial_mass = problem.phase_mass(&state);
    let mut net_outflow = [0.0f64; 2];
    let mut net_source = [0.0f64; 2];

    let mut t = 0.0;
    let mut step = 0;
    let t_eps = 1e-9 * problem.dt;
    while t + t_eps < problem.t_final {
        let dt = problem.dt.min(problem.t_final - t);
        let step_start = Instant::now();
        let mut ni = 0;
        let mut li = 0;
        let mut cut = false;

        let mut advance = |state_in: &State, dt_try: f64| -> Result<State> {
            let report = newton_step(problem, state_in, dt_try, precond, params, step)?;
            ni += report.newton_iterations;
            li += report.linear_iterations;
            if !report.amg.is_empty() {
                metrics.amg =
                    report.amg.iter().map(|(k, s)| (k.to_string(), *s)).collect();
            }
            let mb = mass_balance(&problem.inputs(), &report.state, state_in, dt_try)?;
            for phase in 0..2 {
                net_outflow[phase] += mb.boundary_outflow[phase];
                net_source[phase] += mb.source_injection[phase];
            }
            Ok(report.state)
        };

        let next = match advance(&state, dt) {
            Ok(s) => Ok(s),
            Err(first_err) => {
                // single retry as two half steps
                cut = true;
                advance(&state, 0.5 * dt)
                    .and_then(|mid| advance(&mid, 0.5 * dt))
                    .map_err(|_| first_err)
            }
        };

        match next {
            Ok(s) => {
                state = s;
                t += dt;
                step += 1;
                if cut {
                    metrics.step_cut_count += 1;
                }
                metrics.total_newton += ni;
                metrics.total_linear += li;
                metrics.steps.push(StepMetrics {
                    step,
                    t_end: t,
                    dt,
                    newton_iterations: ni,
                    linear_iterations: li,
                    wall_seconds: step_start.elapsed().as_secs_f64(),
                    cut,
                });
                if let SnapshotPolicy::EverySteps(k) = snapshots {
                    if k > 0 && step % k == 0 {
                        recorded.push((t, state.clone()));
                    }
                }
            }
            Err(e) => {
                metrics.total_newton += ni;
                metrics.total_linear += li;
                metrics.converged = false;
                metrics.failure = Some(e.to_string());
                break;
            }
        }
    }

    if matches!(snapshots, SnapshotPolicy::Final) {
        recorded.push((t, state.clone()));
    }

    let final_mass = problem.phase_mass(&state);
    for phase in 0..2 {
        let defect =
            (final_mass[phase] - initial_mass[phase]) + net_outflow[phase] - net_source[phase];
        let scale = initial_mass[phase]
            .abs()
            .max(final_mass[phase].abs())
            .max(net_outflow[phase].abs())
            .max(net_source[phase].abs())
            .max(1e-300);
        metrics.mass_balance_error[phase] = defect.abs() / scale;
    }
    metrics.wall_seconds = run_start.elapsed().as_secs_f64();
    RunResult { metrics, final_state: state, snapshots: recorded }
}
