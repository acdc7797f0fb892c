//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! with the measured numbers (run with `--nocapture` to see them all).

use std::path::{Path, PathBuf};
use std::time::Instant;

use twophase::bench::preconditioned_spectrum;
use twophase::dense::DenseMatrix;
use twophase::discretize::{
    assemble_jacobian, assemble_residual, AssemblyInputs, BoundaryCondition,
    BoundaryConditionSet, SourceTerm, State, UnknownOrdering,
};
use twophase::gmres::{gmres, GmresParams};
use twophase::grid::{build_grid, Axis, Side};
use twophase::precond::{
    amg_setup, apply_block_factorization, apply_two_stage_additive,
    apply_two_stage_combinative, build_simple_schur, ilu0_factor, AmgParams, FieldRestriction,
    PrecondMethod,
};
use twophase::rockfluid::{CapillaryModel, FluidProps, RelPermModel, RockProps};
use twophase::scenario::{load_scenario, Scenario};
use twophase::sim::{run_simulation, SnapshotPolicy, SolveMetrics};
use twophase::sparse::poisson_2d;

const DAY: f64 = 86400.0;
const MILLIDARCY: f64 = 9.869233e-16;

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn criterion(number: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {number:>2} ({name}): {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {number} ({name}) failed: {detail}");
}

fn run_method(scenario: &Scenario, method: PrecondMethod) -> SolveMetrics {
    let problem = scenario.build().expect("build problem");
    let mut precond = scenario.precond;
    precond.method = method;
    run_simulation(&problem, &precond, &scenario.solver, SnapshotPolicy::None).metrics
}

// -------------------------------------------------------------------------
// 1. Jacobian exactness on a heterogeneous grid with Brooks-Corey Pc

#[test]
fn criterion_01_jacobian_exactness() {
    let start = Instant::now();
    let grid = build_grid(4, 4, 1, 8.0, 8.0, 1.0, Some(Axis::Y)).unwrap();
    let n = grid.n_cells();
    let mut rock = RockProps::uniform(n, 0.2, 100.0 * MILLIDARCY, 0.0, 0.0);
    for (i, k) in rock.perm.iter_mut().enumerate() {
        let f = 1.0 + 2.0 * (((i * 11 + 3) % 13) as f64) / 13.0;
        *k = [100.0 * MILLIDARCY * f, 60.0 * MILLIDARCY * f, 100.0 * MILLIDARCY];
    }
    let fluid = FluidProps { rho_w: 1000.0, rho_n: 700.0, mu_w: 1e-3, mu_n: 1e-2, g: 9.81 };
    // Brooks-Corey parameters of the diffusion-dominated example set
    let capillary = CapillaryModel::brooks_corey(1e6, 2.5);
    let relperm = RelPermModel::Quadratic;
    let mut bc = BoundaryConditionSet::no_flow(&grid);
    for (f, cond) in grid.boundary_faces().iter().zip(bc.per_face.iter_mut()) {
        if f.axis == Axis::X && f.side == Side::High {
            *cond = BoundaryCondition::DirichletPressureSaturation { p_w: 9e4, s_w: 0.3 };
        }
        if f.axis == Axis::X && f.side == Side::Low && f.cell == 0 {
            *cond = BoundaryCondition::NeumannTotalFlux { rate: 2.0 / DAY, s_w_inflow: 1.0 };
        }
    }
    let src = SourceTerm::zero(n);
    let inputs = AssemblyInputs {
        grid: &grid,
        rock: &rock,
        fluid: &fluid,
        capillary: &capillary,
        relperm: &relperm,
        bc: &bc,
        src: &src,
    };
    let mut state = State::uniform(n, 1e5, 0.5);
    for i in 0..n {
        let (ci, cj, _) = grid.cell_coords(i);
        state.p_w[i] = 1.0e5 + 8.0e3 * ci as f64 - 3.0e3 * cj as f64;
        state.s_n[i] = 0.3 + 0.03 * ci as f64 + 0.015 * cj as f64;
    }
    let old = State::uniform(n, 1e5, 0.55);
    let dt = 5.0 * DAY;
    let ord = UnknownOrdering::VariableBlocked;

    let analytic =
        assemble_jacobian(&inputs, &state, &old, dt, ord).unwrap().coupled().to_dense();
    let mut fd = DenseMatrix::zeros(2 * n, 2 * n);
    for col in 0..2 * n {
        let u = if col < n { state.p_w[col] } else { state.s_n[col - n] };
        let h = 1e-6 * (1.0 + u.abs());
        let mut plus = state.clone();
        let mut minus = state.clone();
        if col < n {
            plus.p_w[col] += h;
            minus.p_w[col] -= h;
        } else {
            plus.s_n[col - n] += h;
            minus.s_n[col - n] -= h;
        }
        let rp = assemble_residual(&inputs, &plus, &old, dt, ord).unwrap();
        let rm = assemble_residual(&inputs, &minus, &old, dt, ord).unwrap();
        for row in 0..2 * n {
            fd[(row, col)] = (rp[row] - rm[row]) / (2.0 * h);
        }
    }
    let floor = 1e-6 * analytic.max_abs();
    let mut worst = 0.0f64;
    for r in 0..2 * n {
        for c in 0..2 * n {
            let (a, f) = (analytic[(r, c)], fd[(r, c)]);
            worst = worst.max((a - f).abs() / a.abs().max(f.abs()).max(floor));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    criterion(
        1,
        "jacobian exactness",
        worst <= 1e-5 && elapsed <= 1.0,
        &format!("max relative error {worst:.3e} (tol 1e-5), {elapsed:.2}s"),
    );
}

// -------------------------------------------------------------------------
// 2. Algorithms match their matrix forms with exact inner solves

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b.iter()).fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

#[test]
fn criterion_02_matrix_form_equivalence() {
    let start = Instant::now();
    // 3x3-grid Jacobian from a flood state
    let grid = build_grid(3, 3, 1, 6.0, 3.0, 1.0, Some(Axis::Y)).unwrap();
    let n = grid.n_cells();
    let rock = RockProps::uniform(n, 0.2, 100.0 * MILLIDARCY, 0.0, 0.0);
    let fluid = FluidProps { rho_w: 1000.0, rho_n: 700.0, mu_w: 1e-3, mu_n: 1e-2, g: 9.81 };
    let capillary = CapillaryModel::linear(1e5);
    let relperm = RelPermModel::Quadratic;
    let mut bc = BoundaryConditionSet::no_flow(&grid);
    for (f, cond) in grid.boundary_faces().iter().zip(bc.per_face.iter_mut()) {
        if f.axis == Axis::X && f.side == Side::High {
            *cond = BoundaryCondition::DirichletPressureSaturation { p_w: 9e4, s_w: 0.25 };
        }
    }
    let src = SourceTerm::zero(n);
    let inputs = AssemblyInputs {
        grid: &grid,
        rock: &rock,
        fluid: &fluid,
        capillary: &capillary,
        relperm: &relperm,
        bc: &bc,
        src: &src,
    };
    let mut state = State::uniform(n, 1e5, 0.6);
    for i in 0..n {
        state.p_w[i] += 2.0e3 * (i as f64);
        state.s_n[i] -= 0.03 * (i as f64);
    }
    let old = State::uniform(n, 1e5, 0.62);
    let jac = assemble_jacobian(&inputs, &state, &old, 5.0 * DAY,
        UnknownOrdering::PointInterleaved).unwrap();

    let restr = FieldRestriction::new(n, jac.ordering());
    let a_dense = jac.coupled().to_dense();
    let ilu = ilu0_factor(jac.coupled()).unwrap();
    let p1 = ilu.lower().matmul(&ilu.upper()).to_dense();
    let p1_inv = DenseMatrix::from_operator(&ilu);
    let app_lu = jac.block(twophase::discretize::Block::Pp).to_dense().lu().unwrap();
    let ass_lu = jac.block(twophase::discretize::Block::Ss).to_dense().lu().unwrap();
    let app_inv = app_lu.inverse();
    let ass_inv = ass_lu.inverse();
    let r: Vec<f64> = (0..2 * n).map(|i| ((i * 13 % 29) as f64) - 14.0).collect();

    // combinative: (I - Rp^T App^-1 Rp (A - P1)) P1^-1 r
    let z = a_dense.sub(&p1).matmul(&p1_inv);
    let zr = z.matvec(&r);
    let corr_p = app_inv.matvec(&restr.restrict_p(&zr));
    let mut comb_oracle = p1_inv.matvec(&r);
    let mut scatter = vec![0.0; 2 * n];
    restr.prolong_p_add(&corr_p, &mut scatter);
    for (o, s) in comb_oracle.iter_mut().zip(&scatter) {
        *o -= s;
    }
    let comb = apply_two_stage_combinative(jac.coupled(), &restr, &ilu, &app_lu, &r);
    let err1 = rel_err(&comb, &comb_oracle);

    // additive: also subtract Rs^T Ass^-1 Rs (A - P1) P1^-1 r
    let corr_s = ass_inv.matvec(&restr.restrict_s(&zr));
    let mut add_oracle = p1_inv.matvec(&r);
    let mut scatter = vec![0.0; 2 * n];
    restr.prolong_p_add(&corr_p, &mut scatter);
    restr.prolong_s_add(&corr_s, &mut scatter);
    for (o, s) in add_oracle.iter_mut().zip(&scatter) {
        *o -= s;
    }
    let add = apply_two_stage_additive(jac.coupled(), &restr, &ilu, &app_lu, &ass_lu, &r);
    let err2 = rel_err(&add, &add_oracle);

    // block factorization: [[S^-1, -S^-1 Aps Ass^-1], [0, Ass^-1]] r
    let schur = build_simple_schur(&jac, false).unwrap();
    let schur_lu = schur.to_dense().lu().unwrap();
    let s_inv = schur_lu.inverse();
    let aps = jac.block(twophase::discretize::Block::Ps).to_dense();
    let rp = restr.restrict_p(&r);
    let rs = restr.restrict_s(&r);
    let mut p_part = s_inv.matvec(&rp);
    let cross = s_inv.matmul(&aps).matmul(&ass_inv).matvec(&rs);
    for (pi, ci) in p_part.iter_mut().zip(&cross) {
        *pi -= ci;
    }
    let s_part = ass_inv.matvec(&rs);
    let mut bf_oracle = vec![0.0; 2 * n];
    restr.prolong_p_add(&p_part, &mut bf_oracle);
    restr.prolong_s_add(&s_part, &mut bf_oracle);
    let bf = apply_block_factorization(
        jac.block(twophase::discretize::Block::Ps),
        &restr,
        &ass_lu,
        &schur_lu,
        &r,
    );
    let err3 = rel_err(&bf, &bf_oracle);

    let elapsed = start.elapsed().as_secs_f64();
    let worst = err1.max(err2).max(err3);
    criterion(
        2,
        "algorithm/matrix-form equivalence",
        worst <= 1e-12 && elapsed <= 1.0,
        &format!(
            "combinative {err1:.2e}, additive {err2:.2e}, block factorization {err3:.2e} \
             (tol 1e-12), {elapsed:.2}s"
        ),
    );
}

// -------------------------------------------------------------------------
// 3. Global mass conservation over a full run

#[test]
fn criterion_03_conservation() {
    let start = Instant::now();
    let mut scenario =
        load_scenario(&scenarios_dir().join("gravity_diffusion_20.cfg")).unwrap();
    scenario.t_final = 100.0 * DAY; // 10 steps at dt = 10 days
    let metrics = run_method(&scenario, PrecondMethod::BlockFactorization);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = metrics.converged
        && metrics.steps.len() == 10
        && metrics.step_cut_count == 0
        && metrics.mass_balance_error.iter().all(|&e| e <= 1e-8)
        && elapsed <= 30.0;
    criterion(
        3,
        "mass conservation",
        pass,
        &format!(
            "10 steps, per-phase closure [{:.2e}, {:.2e}] (tol 1e-8), cuts {}, {elapsed:.1}s",
            metrics.mass_balance_error[0],
            metrics.mass_balance_error[1],
            metrics.step_cut_count
        ),
    );
}

// -------------------------------------------------------------------------
// 4. AMG quality and grid independence on Poisson

#[test]
fn criterion_04_amg_grid_independence() {
    let start = Instant::now();
    let mut counts = Vec::new();
    for n in [32usize, 64, 128] {
        let a = poisson_2d(n, n);
        let h = amg_setup(&a, &AmgParams::default()).unwrap();
        let b = vec![1.0; a.n_rows()];
        let params = GmresParams { rel_tol: 1e-10, max_iters: 100, restart: 100 };
        let (_, stats) = gmres(&a, &b, &h, &params);
        assert!(stats.converged, "poisson solve failed at {n}x{n}");
        counts.push(stats.iterations);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = counts.iter().all(|&c| c <= 12)
        && counts.windows(2).all(|w| w[1] as i64 - w[0] as i64 <= 2)
        && elapsed <= 60.0;
    criterion(
        4,
        "AMG grid independence",
        pass,
        &format!("iterations {counts:?} at 32^2/64^2/128^2 (cap 12, growth cap 2), {elapsed:.1}s"),
    );
}

// -------------------------------------------------------------------------
// 5. Table-3 ordering on the heterogeneous diffusion-dominated scenario

#[test]
fn criterion_05_diffusion_ordering() {
    let start = Instant::now();
    let scenario = load_scenario(&scenarios_dir().join("het_lognormal_50x10.cfg")).unwrap();
    let mut ratio = std::collections::BTreeMap::new();
    for method in [
        PrecondMethod::CoupledAmg,
        PrecondMethod::CprAmg1,
        PrecondMethod::CprAmg2,
        PrecondMethod::BlockFactorization,
    ] {
        let m = run_method(&scenario, method);
        assert!(m.converged, "{method:?} did not converge");
        ratio.insert(method.name(), m.li_per_ni());
    }
    let elapsed = start.elapsed().as_secs_f64();
    let (amg, bf, cpr2, cpr1) =
        (ratio["amg"], ratio["bf"], ratio["cpr-amg2"], ratio["cpr-amg1"]);
    let pass = amg < bf && bf < cpr2 && cpr2 < cpr1 && cpr1 >= 3.0 * bf && elapsed <= 300.0;
    criterion(
        5,
        "diffusion-dominated LI/NI ordering",
        pass,
        &format!(
            "LI/NI: amg {amg:.1}, bf {bf:.1}, cpr-amg2 {cpr2:.1}, cpr-amg1 {cpr1:.1}; \
             required amg < bf < cpr-amg2 < cpr-amg1 with cpr-amg1 >= 3x bf \
             (cpr-amg1/bf = {:.2}), {elapsed:.1}s",
            cpr1 / bf
        ),
    );
}

// -------------------------------------------------------------------------
// 6. Robustness flip in the strongly advection-dominated regime

#[test]
fn criterion_06_advection_robustness_flip() {
    let start = Instant::now();
    let scenario = load_scenario(&scenarios_dir().join("het_advection_50x10.cfg")).unwrap();
    let amg = run_method(&scenario, PrecondMethod::CoupledAmg);
    let cpr1 = run_method(&scenario, PrecondMethod::CprAmg1);
    let cpr2 = run_method(&scenario, PrecondMethod::CprAmg2);
    let bf = run_method(&scenario, PrecondMethod::BlockFactorization);
    let elapsed = start.elapsed().as_secs_f64();
    let pass =
        !amg.converged && cpr1.converged && cpr2.converged && bf.converged && elapsed <= 300.0;
    criterion(
        6,
        "advection robustness flip",
        pass,
        &format!(
            "converged: amg {} (expected false), cpr-amg1 {}, cpr-amg2 {}, bf {}; {elapsed:.1}s",
            amg.converged, cpr1.converged, cpr2.converged, bf.converged
        ),
    );
}

// -------------------------------------------------------------------------
// 7. Mesh-refinement scaling of BF versus CPR-AMG(1)

#[test]
fn criterion_07_refinement_scaling() {
    let start = Instant::now();
    let base = load_scenario(&scenarios_dir().join("gravity_diffusion_20.cfg")).unwrap();
    let ratios = |method: PrecondMethod| -> Vec<f64> {
        [20usize, 40, 80]
            .iter()
            .map(|&mesh| {
                let mut s = base.clone();
                s.grid.nx = mesh;
                s.grid.ny = mesh;
                let m = run_method(&s, method);
                assert!(m.converged, "{method:?} failed at {mesh}^2");
                m.li_per_ni()
            })
            .collect()
    };
    let bf = ratios(PrecondMethod::BlockFactorization);
    let cpr1 = ratios(PrecondMethod::CprAmg1);
    let elapsed = start.elapsed().as_secs_f64();
    let bf_flat = bf.windows(2).all(|w| w[1] <= 1.15 * w[0]);
    let cpr1_grows = cpr1.windows(2).all(|w| w[1] >= 1.5 * w[0]);
    criterion(
        7,
        "mesh-refinement scaling",
        bf_flat && cpr1_grows && elapsed <= 900.0,
        &format!(
            "bf LI/NI {:.1?} (growth cap 15%), cpr-amg1 {:.1?} (growth floor 50%), {elapsed:.1}s",
            bf, cpr1
        ),
    );
}

// -------------------------------------------------------------------------
// 8. NI invariance across converging preconditioners

#[test]
fn criterion_08_newton_count_invariance() {
    let scenario = load_scenario(&scenarios_dir().join("het_lognormal_50x10.cfg")).unwrap();
    let mut counts = Vec::new();
    for method in [
        PrecondMethod::CoupledAmg,
        PrecondMethod::CprAmg1,
        PrecondMethod::CprAmg2,
        PrecondMethod::BlockFactorization,
    ] {
        let m = run_method(&scenario, method);
        assert!(m.converged, "{method:?} did not converge");
        counts.push((method.name(), m.total_newton));
    }
    let reference = counts[0].1;
    let pass = counts.iter().all(|&(_, ni)| ni == reference);
    criterion(
        8,
        "Newton count invariance",
        pass,
        &format!("total NI per method: {counts:?} (exact equality required)"),
    );
}

// -------------------------------------------------------------------------
// 9. Spectrum study: near-origin cluster of the combinative method

#[test]
fn criterion_09_spectrum_pattern() {
    let start = Instant::now();
    let scenario = load_scenario(&scenarios_dir().join("het_lognormal_50x10.cfg")).unwrap();
    let min_abs = |method: PrecondMethod| -> f64 {
        let (_, summary) = preconditioned_spectrum(&scenario, method, 3).unwrap();
        summary.min_abs
    };
    let cpr1 = min_abs(PrecondMethod::CprAmg1);
    let cpr2 = min_abs(PrecondMethod::CprAmg2);
    let bf = min_abs(PrecondMethod::BlockFactorization);
    let elapsed = start.elapsed().as_secs_f64();
    // the block factorization spectrum must also sit clear of the origin
    let pass =
        cpr1 * 5.0 <= cpr2 && cpr1 * 5.0 <= bf && bf > 0.1 && elapsed <= 300.0;
    criterion(
        9,
        "preconditioned spectrum pattern",
        pass,
        &format!(
            "min |ev|: cpr-amg1 {cpr1:.3e}, cpr-amg2 {cpr2:.3e} ({:.0}x), bf {bf:.3e} \
             ({:.0}x, floor 0.1); factor floor 5, {elapsed:.1}s",
            cpr2 / cpr1,
            bf / cpr1
        ),
    );
}

// -------------------------------------------------------------------------
// 10. Newton iterations per step grow monotonically with dt

#[test]
fn criterion_10_timestep_sensitivity() {
    let start = Instant::now();
    let base = load_scenario(&scenarios_dir().join("gravity_advection_80.cfg")).unwrap();
    let mut detail = String::new();
    let mut pass = true;
    for method in
        [PrecondMethod::CprAmg1, PrecondMethod::CprAmg2, PrecondMethod::BlockFactorization]
    {
        let mut ni_per_step = Vec::new();
        for dt_days in [1.0, 2.0, 4.0, 8.0] {
            let mut s = base.clone();
            s.dt = dt_days * DAY;
            s.t_final = 8.0 * DAY;
            let m = run_method(&s, method);
            if !m.converged {
                // only converging methods enter the comparison
                continue;
            }
            ni_per_step.push(m.ni_per_step());
        }
        let monotone = ni_per_step.windows(2).all(|w| w[1] > w[0]);
        pass &= monotone && ni_per_step.len() == 4;
        detail.push_str(&format!("{} NI/TS {:.2?}; ", method.name(), ni_per_step));
    }
    let elapsed = start.elapsed().as_secs_f64();
    pass &= elapsed <= 1200.0;
    criterion(
        10,
        "time-step sensitivity",
        pass,
        &format!("{detail}(strictly increasing over dt 1/2/4/8 days), {elapsed:.1}s"),
    );
}
