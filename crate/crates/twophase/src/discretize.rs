//! Assembly of the fully discrete nonlinear residual and its exact analytic
//! Jacobian in 2x2 block form.
//!
//! Unknowns are wetting pressure and non-wetting saturation per cell. The
//! residual of cell `i` and phase `a` is
//!
//! ```text
//! R = (xi_new - xi_old) + (dt/V) * sum_faces gamma * (rho kr/mu)_up * K_harm
//!     * (phi_i - phi_j)/dx + (dt/V) * boundary fluxes - dt * Q
//! ```
//!
//! with storage `xi = porosity * rho * S`, phase potential
//! `phi = P - rho g D` (the non-wetting pressure is `P_w + P_c`), donor-cell
//! upwinding of the mass mobility, and harmonic face permeabilities. All
//! coefficients are evaluated at the new time level (backward Euler).
//!
//! The Jacobian differentiates through the currently selected upwind donor
//! only; the switch itself is treated as locally constant.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rockfluid::{
    capillary_derivative, capillary_pressure, relative_permeability,
    relative_permeability_deriv, CapillaryModel, FluidProps, RelPermModel, RockProps,
};
use crate::sparse::CsrMatrix;

/// Primary unknowns: per-cell wetting pressure (Pa) and non-wetting
/// saturation.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub p_w: Vec<f64>,
    pub s_n: Vec<f64>,
}

impl State {
    pub fn uniform(n_cells: usize, p_w: f64, s_n: f64) -> Self {
        Self { p_w: vec![p_w; n_cells], s_n: vec![s_n; n_cells] }
    }

    pub fn n_cells(&self) -> usize {
        self.p_w.len()
    }
}

/// Condition attached to one boundary face. Default is no flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryCondition {
    NoFlow,
    /// Fixed wetting pressure and wetting saturation at the face, imposed by
    /// ghost-value substitution with half-cell transmissibility.
    DirichletPressureSaturation { p_w: f64, s_w: f64 },
    /// Prescribed total volumetric rate through the face (m^3/s, positive
    /// into the domain). Injection carries `s_w_inflow` as the donor
    /// saturation; production splits the rate by the interior fractional
    /// flow.
    NeumannTotalFlux { rate: f64, s_w_inflow: f64 },
}

/// One condition per boundary face, parallel to `grid.boundary_faces()`.
#[derive(Debug, Clone)]
pub struct BoundaryConditionSet {
    pub per_face: Vec<BoundaryCondition>,
}

impl BoundaryConditionSet {
    pub fn no_flow(grid: &Grid) -> Self {
        Self { per_face: vec![BoundaryCondition::NoFlow; grid.boundary_faces().len()] }
    }
}

/// Cell-centered volumetric source rates in kg/(m^3 s), zero outside
/// designated cells.
#[derive(Debug, Clone)]
pub struct SourceTerm {
    pub q_w: Vec<f64>,
    pub q_n: Vec<f64>,
}

impl SourceTerm {
    pub fn zero(n_cells: usize) -> Self {
        Self { q_w: vec![0.0; n_cells], q_n: vec![0.0; n_cells] }
    }
}

/// Layout of the 2N coupled unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum UnknownOrdering {
    /// All pressures first, then all saturations.
    VariableBlocked,
    /// Pressure and saturation interleaved per grid point.
    PointInterleaved,
}

impl UnknownOrdering {
    #[inline]
    pub fn p_index(self, cell: usize, n_cells: usize) -> usize {
        match self {
            UnknownOrdering::VariableBlocked => {
                let _ = n_cells;
                cell
            }
            UnknownOrdering::PointInterleaved => 2 * cell,
        }
    }

    #[inline]
    pub fn s_index(self, cell: usize, n_cells: usize) -> usize {
        match self {
            UnknownOrdering::VariableBlocked => n_cells + cell,
            UnknownOrdering::PointInterleaved => 2 * cell + 1,
        }
    }

    /// Permutation taking this ordering's indices to `other`'s:
    /// `perm[self_index] = other_index`.
    pub fn permutation_to(self, other: UnknownOrdering, n_cells: usize) -> Vec<usize> {
        let mut perm = vec![0usize; 2 * n_cells];
        for c in 0..n_cells {
            perm[self.p_index(c, n_cells)] = other.p_index(c, n_cells);
            perm[self.s_index(c, n_cells)] = other.s_index(c, n_cells);
        }
        perm
    }
}

/// The four blocks of the coupled Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Pp,
    Ps,
    Sp,
    Ss,
}

/// Coupled sparse Jacobian over 2N unknowns plus the four N x N blocks.
///
/// The blocks are the ground truth; the coupled matrix is laid out from them
/// in the requested ordering by pure copying, so the two orderings hold
/// bitwise-identical values and reordering is an exact symmetric
/// permutation.
#[derive(Debug, Clone)]
pub struct BlockJacobian {
    n_cells: usize,
    ordering: UnknownOrdering,
    a_pp: CsrMatrix,
    a_ps: CsrMatrix,
    a_sp: CsrMatrix,
    a_ss: CsrMatrix,
    coupled: CsrMatrix,
}

impl BlockJacobian {
    /// Assemble a coupled Jacobian from explicit blocks.
    pub fn from_blocks(
        n_cells: usize,
        ordering: UnknownOrdering,
        a_pp: CsrMatrix,
        a_ps: CsrMatrix,
        a_sp: CsrMatrix,
        a_ss: CsrMatrix,
    ) -> Self {
        let coupled = couple_blocks(n_cells, ordering, &a_pp, &a_ps, &a_sp, &a_ss);
        Self { n_cells, ordering, a_pp, a_ps, a_sp, a_ss, coupled }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn ordering(&self) -> UnknownOrdering {
        self.ordering
    }

    pub fn coupled(&self) -> &CsrMatrix {
        &self.coupled
    }

    /// View of one of the four blocks.
    pub fn block(&self, which: Block) -> &CsrMatrix {
        match which {
            Block::Pp => &self.a_pp,
            Block::Ps => &self.a_ps,
            Block::Sp => &self.a_sp,
            Block::Ss => &self.a_ss,
        }
    }

    /// The same Jacobian laid out in another ordering.
    pub fn reordered(&self, target: UnknownOrdering) -> BlockJacobian {
        if target == self.ordering {
            return self.clone();
        }
        BlockJacobian::from_blocks(
            self.n_cells,
            target,
            self.a_pp.clone(),
            self.a_ps.clone(),
            self.a_sp.clone(),
            self.a_ss.clone(),
        )
    }

    /// Ratio of the largest saturation-column entry to the largest
    /// pressure-column entry. In SI units the pressure derivatives are many
    /// orders smaller, which starves scalar strength-of-connection measures
    /// on the coupled matrix; measuring pressure in units of this scale
    /// balances the nodal blocks.
    pub fn pressure_column_scale(&self) -> f64 {
        let p_cols = self.a_pp.max_abs().max(self.a_sp.max_abs());
        let s_cols = self.a_ps.max_abs().max(self.a_ss.max_abs());
        if p_cols > 0.0 && s_cols > 0.0 {
            s_cols / p_cols
        } else {
            1.0
        }
    }

    /// Change of variable p -> p / c: scales the pressure columns by c.
    /// A solution delta of the scaled system maps back by multiplying its
    /// pressure entries with c.
    pub fn scale_pressure_columns(&self, c: f64) -> BlockJacobian {
        let scale = |m: &CsrMatrix| {
            let mut out = m.clone();
            for v in out.values_mut() {
                *v *= c;
            }
            out
        };
        BlockJacobian::from_blocks(
            self.n_cells,
            self.ordering,
            scale(&self.a_pp),
            self.a_ps.clone(),
            scale(&self.a_sp),
            self.a_ss.clone(),
        )
    }
}

fn couple_blocks(
    n: usize,
    ordering: UnknownOrdering,
    a_pp: &CsrMatrix,
    a_ps: &CsrMatrix,
    a_sp: &CsrMatrix,
    a_ss: &CsrMatrix,
) -> CsrMatrix {
    let mut row_ptr = Vec::with_capacity(2 * n + 1);
    let nnz = a_pp.nnz() + a_ps.nnz() + a_sp.nnz() + a_ss.nnz();
    let mut col_idx = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    row_ptr.push(0);

    // merge one pressure-block row and one saturation-block row, mapping
    // cell columns into the coupled index space
    let mut push_row = |left: &CsrMatrix, right: &CsrMatrix, cell: usize| {
        match ordering {
            UnknownOrdering::VariableBlocked => {
                for (c, v) in left.row(cell) {
                    col_idx.push(ordering.p_index(c, n));
                    values.push(v);
                }
                for (c, v) in right.row(cell) {
                    col_idx.push(ordering.s_index(c, n));
                    values.push(v);
                }
            }
            UnknownOrdering::PointInterleaved => {
                // sorted merge: p-columns map to 2c, s-columns to 2c+1
                let mut li = left.row(cell).peekable();
                let mut ri = right.row(cell).peekable();
                loop {
                    match (li.peek(), ri.peek()) {
                        (Some(&(lc, lv)), Some(&(rc, _))) if 2 * lc < 2 * rc + 1 => {
                            col_idx.push(2 * lc);
                            values.push(lv);
                            li.next();
                        }
                        (Some(_), Some(&(rc, rv))) => {
                            col_idx.push(2 * rc + 1);
                            values.push(rv);
                            ri.next();
                        }
                        (Some(&(lc, lv)), None) => {
                            col_idx.push(2 * lc);
                            values.push(lv);
                            li.next();
                        }
                        (None, Some(&(rc, rv))) => {
                            col_idx.push(2 * rc + 1);
                            values.push(rv);
                            ri.next();
                        }
                        (None, None) => break,
                    }
                }
            }
        }
        row_ptr.push(col_idx.len());
    };

    match ordering {
        UnknownOrdering::VariableBlocked => {
            for cell in 0..n {
                push_row(a_pp, a_ps, cell);
            }
            for cell in 0..n {
                push_row(a_sp, a_ss, cell);
            }
        }
        UnknownOrdering::PointInterleaved => {
            for cell in 0..n {
                push_row(a_pp, a_ps, cell);
                push_row(a_sp, a_ss, cell);
            }
        }
    }
    CsrMatrix::new(2 * n, 2 * n, row_ptr, col_idx, values)
}

/// Everything constant over one assembly call.
pub struct AssemblyInputs<'a> {
    pub grid: &'a Grid,
    pub rock: &'a RockProps,
    pub fluid: &'a FluidProps,
    pub capillary: &'a CapillaryModel,
    pub relperm: &'a RelPermModel,
    pub bc: &'a BoundaryConditionSet,
    pub src: &'a SourceTerm,
}

// Per-cell values at the new time level, precomputed once per assembly.
struct CellCoeffs {
    pot_w: Vec<f64>,
    pot_n: Vec<f64>,
    mob_w: Vec<f64>,
    mob_n: Vec<f64>,
    // derivatives with respect to s_n
    dmob_w: Vec<f64>,
    dmob_n: Vec<f64>,
    dpc: Vec<f64>,
}

fn cell_coeffs(inputs: &AssemblyInputs, state: &State) -> CellCoeffs {
    let n = state.n_cells();
    let fluid = inputs.fluid;
    let eps = inputs.capillary.epsilon_s;
    let mut c = CellCoeffs {
        pot_w: vec![0.0; n],
        pot_n: vec![0.0; n],
        mob_w: vec![0.0; n],
        mob_n: vec![0.0; n],
        dmob_w: vec![0.0; n],
        dmob_n: vec![0.0; n],
        dpc: vec![0.0; n],
    };
    for i in 0..n {
        let s_w = 1.0 - state.s_n[i];
        let pc = capillary_pressure(s_w, inputs.capillary, inputs.rock);
        let dpc_dsn = -capillary_derivative(s_w, inputs.capillary, inputs.rock);
        let (krw, krn) = relative_permeability(s_w, inputs.relperm, inputs.rock, eps);
        let (dkrw_dsw, dkrn_dsw) =
            relative_permeability_deriv(s_w, inputs.relperm, inputs.rock, eps);
        let gd = fluid.g * inputs.grid.depth(i);
        c.pot_w[i] = state.p_w[i] - fluid.rho_w * gd;
        c.pot_n[i] = state.p_w[i] + pc - fluid.rho_n * gd;
        c.mob_w[i] = fluid.rho_w * krw / fluid.mu_w;
        c.mob_n[i] = fluid.rho_n * krn / fluid.mu_n;
        c.dmob_w[i] = -fluid.rho_w * dkrw_dsw / fluid.mu_w;
        c.dmob_n[i] = -fluid.rho_n * dkrn_dsw / fluid.mu_n;
        c.dpc[i] = dpc_dsn;
    }
    c
}

// Boundary-face ghost values derived from a Dirichlet condition.
struct GhostCoeffs {
    pot_w: f64,
    pot_n: f64,
    mob_w: f64,
    mob_n: f64,
}

fn ghost_coeffs(
    inputs: &AssemblyInputs,
    p_b: f64,
    s_w_b: f64,
    face_depth: f64,
) -> GhostCoeffs {
    let fluid = inputs.fluid;
    let eps = inputs.capillary.epsilon_s;
    let pc = capillary_pressure(s_w_b, inputs.capillary, inputs.rock);
    let (krw, krn) = relative_permeability(s_w_b, inputs.relperm, inputs.rock, eps);
    let gd = fluid.g * face_depth;
    GhostCoeffs {
        pot_w: p_b - fluid.rho_w * gd,
        pot_n: p_b + pc - fluid.rho_n * gd,
        mob_w: fluid.rho_w * krw / fluid.mu_w,
        mob_n: fluid.rho_n * krn / fluid.mu_n,
    }
}

fn validate(inputs: &AssemblyInputs, state_new: &State, state_old: &State, dt: f64) -> Result<()> {
    let n = inputs.grid.n_cells();
    for (len, _) in [
        (state_new.p_w.len(), "p_w"),
        (state_new.s_n.len(), "s_n"),
        (state_old.p_w.len(), "old p_w"),
        (state_old.s_n.len(), "old s_n"),
        (inputs.rock.porosity.len(), "porosity"),
        (inputs.rock.perm.len(), "perm"),
        (inputs.src.q_w.len(), "q_w"),
        (inputs.src.q_n.len(), "q_n"),
    ] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    if inputs.bc.per_face.len() != inputs.grid.boundary_faces().len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.grid.boundary_faces().len(),
            got: inputs.bc.per_face.len(),
        });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::NonFinite("time step"));
    }
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !finite(&state_new.p_w) || !finite(&state_new.s_n) {
        return Err(Error::NonFinite("state"));
    }
    Ok(())
}

/// Assemble the residual of the fully discrete system, ordered per
/// `ordering`.
pub fn assemble_residual(
    inputs: &AssemblyInputs,
    state_new: &State,
    state_old: &State,
    dt: f64,
    ordering: UnknownOrdering,
) -> Result<Vec<f64>> {
    let (residual, _) = assemble(inputs, state_new, state_old, dt, ordering, false)?;
    Ok(residual)
}

/// Assemble the exact analytic Jacobian of the residual.
pub fn assemble_jacobian(
    inputs: &AssemblyInputs,
    state_new: &State,
    state_old: &State,
    dt: f64,
    ordering: UnknownOrdering,
) -> Result<BlockJacobian> {
    let (_, jac) = assemble(inputs, state_new, state_old, dt, ordering, true)?;
    Ok(jac.expect("jacobian requested"))
}

/// Assemble residual and Jacobian in one sweep.
pub fn assemble_system(
    inputs: &AssemblyInputs,
    state_new: &State,
    state_old: &State,
    dt: f64,
    ordering: UnknownOrdering,
) -> Result<(Vec<f64>, BlockJacobian)> {
    let (residual, jac) = assemble(inputs, state_new, state_old, dt, ordering, true)?;
    Ok((residual, jac.expect("jacobian requested")))
}

fn assemble(
    inputs: &AssemblyInputs,
    state_new: &State,
    state_old: &State,
    dt: f64,
    ordering: UnknownOrdering,
    want_jacobian: bool,
) -> Result<(Vec<f64>, Option<BlockJacobian>)> {
    validate(inputs, state_new, state_old, dt)?;
    let grid = inputs.grid;
    let rock = inputs.rock;
    let fluid = inputs.fluid;
    let n = grid.n_cells();
    let volume = grid.cell_volume();
    let dt_v = dt / volume;

    let coeffs = cell_coeffs(inputs, state_new);
    let mut residual = vec![0.0; 2 * n];
    // block-local Jacobian triplets: [pp, ps, sp, ss]
    let mut tri: [Vec<(usize, usize, f64)>; 4] = Default::default();
    if want_jacobian {
        let cap = 4 * grid.faces().len() + 2 * n;
        for t in tri.iter_mut() {
            t.reserve(cap);
        }
    }

    let p_of = |c: usize| ordering.p_index(c, n);
    let s_of = |c: usize| ordering.s_index(c, n);
    const PP: usize = 0;
    const PS: usize = 1;
    const SP: usize = 2;
    const SS: usize = 3;

    // storage and sources
    for i in 0..n {
        let ds = state_new.s_n[i] - state_old.s_n[i];
        let phi = rock.porosity[i];
        residual[p_of(i)] += -phi * fluid.rho_w * ds - dt * inputs.src.q_w[i];
        residual[s_of(i)] += phi * fluid.rho_n * ds - dt * inputs.src.q_n[i];
        if want_jacobian {
            tri[PS].push((i, i, -phi * fluid.rho_w));
            tri[SS].push((i, i, phi * fluid.rho_n));
            // keep the full nodal block structurally present
            tri[PP].push((i, i, 0.0));
            tri[SP].push((i, i, 0.0));
        }
    }

    // interior faces
    for face in grid.faces() {
        let (i, j) = (face.cell_i, face.cell_j);
        let axis = face.axis.index();
        let h = grid.spacing(face.axis);
        let k_face =
            crate::grid::harmonic_face_permeability(rock.perm[i][axis], rock.perm[j][axis], h, h);
        if k_face == 0.0 {
            continue;
        }
        let tau = face.area * k_face / face.dist;

        for phase in 0..2 {
            let (pot, mob, dmob, pcol, scol) = if phase == 0 {
                (&coeffs.pot_w, &coeffs.mob_w, &coeffs.dmob_w, PP, PS)
            } else {
                (&coeffs.pot_n, &coeffs.mob_n, &coeffs.dmob_n, SP, SS)
            };
            let row = |c: usize| if phase == 0 { p_of(c) } else { s_of(c) };
            let dphi = pot[i] - pot[j];
            let donor = crate::rockfluid::upwind_coefficient(i, j, dphi);
            let flux = tau * mob[donor] * dphi;
            residual[row(i)] += dt_v * flux;
            residual[row(j)] -= dt_v * flux;

            if want_jacobian {
                let m = tau * mob[donor];
                // d/d p_i and d/d p_j (both phases depend on p through phi)
                tri[pcol].push((i, i, dt_v * m));
                tri[pcol].push((i, j, -dt_v * m));
                tri[pcol].push((j, i, -dt_v * m));
                tri[pcol].push((j, j, dt_v * m));
                // capillary chain: only the non-wetting potential sees s_n
                if phase == 1 {
                    let (di, dj) = (coeffs.dpc[i], coeffs.dpc[j]);
                    tri[scol].push((i, i, dt_v * m * di));
                    tri[scol].push((i, j, -dt_v * m * dj));
                    tri[scol].push((j, i, -dt_v * m * di));
                    tri[scol].push((j, j, dt_v * m * dj));
                }
                // donor mobility derivative (frozen upwind direction)
                let dm = tau * dmob[donor] * dphi;
                tri[scol].push((i, donor, dt_v * dm));
                tri[scol].push((j, donor, -dt_v * dm));
            }
        }
    }

    // boundary faces
    for (bf, cond) in grid.boundary_faces().iter().zip(&inputs.bc.per_face) {
        let i = bf.cell;
        match *cond {
            BoundaryCondition::NoFlow => {}
            BoundaryCondition::DirichletPressureSaturation { p_w, s_w } => {
                let axis = bf.axis.index();
                let h = grid.spacing(bf.axis);
                let k = rock.perm[i][axis];
                if k == 0.0 {
                    continue;
                }
                let tau = bf.area * k / (0.5 * h);
                let ghost = ghost_coeffs(inputs, p_w, s_w, grid.boundary_face_depth(bf));
                for phase in 0..2 {
                    let (pot_i, pot_b, mob_i, mob_b, dmob_i, row, pcol, scol) = if phase == 0 {
                        (coeffs.pot_w[i], ghost.pot_w, coeffs.mob_w[i], ghost.mob_w,
                         coeffs.dmob_w[i], p_of(i), PP, PS)
                    } else {
                        (coeffs.pot_n[i], ghost.pot_n, coeffs.mob_n[i], ghost.mob_n,
                         coeffs.dmob_n[i], s_of(i), SP, SS)
                    };
                    let dphi = pot_i - pot_b;
                    // outflow takes the interior donor, inflow the boundary value
                    let (mob, interior_donor) =
                        if dphi > 0.0 { (mob_i, true) } else { (mob_b, false) };
                    let flux = tau * mob * dphi;
                    residual[row] += dt_v * flux;
                    if want_jacobian {
                        let m = tau * mob;
                        tri[pcol].push((i, i, dt_v * m));
                        if phase == 1 {
                            tri[scol].push((i, i, dt_v * m * coeffs.dpc[i]));
                        }
                        if interior_donor {
                            tri[scol].push((i, i, dt_v * tau * dmob_i * dphi));
                        }
                    }
                }
            }
            BoundaryCondition::NeumannTotalFlux { rate, s_w_inflow } => {
                if rate >= 0.0 {
                    // injection at prescribed composition; no state dependence
                    residual[p_of(i)] -= dt_v * fluid.rho_w * rate * s_w_inflow;
                    residual[s_of(i)] -= dt_v * fluid.rho_n * rate * (1.0 - s_w_inflow);
                } else {
                    // production split by the interior fractional flow
                    let q_out = -rate;
                    let eps = inputs.capillary.epsilon_s;
                    let s_w = 1.0 - state_new.s_n[i];
                    let (krw, krn) = relative_permeability(s_w, inputs.relperm, rock, eps);
                    let (dkrw, dkrn) =
                        relative_permeability_deriv(s_w, inputs.relperm, rock, eps);
                    let lam_w = krw / fluid.mu_w;
                    let lam_n = krn / fluid.mu_n;
                    let total = lam_w + lam_n;
                    let (f_w, df_w) = if total > 1e-30 {
                        let dlam_w = -dkrw / fluid.mu_w;
                        let dlam_n = -dkrn / fluid.mu_n;
                        (
                            lam_w / total,
                            (dlam_w * lam_n - lam_w * dlam_n) / (total * total),
                        )
                    } else {
                        (0.5, 0.0)
                    };
                    residual[p_of(i)] += dt_v * fluid.rho_w * q_out * f_w;
                    residual[s_of(i)] += dt_v * fluid.rho_n * q_out * (1.0 - f_w);
                    if want_jacobian {
                        tri[PS].push((i, i, dt_v * fluid.rho_w * q_out * df_w));
                        tri[SS].push((i, i, -dt_v * fluid.rho_n * q_out * df_w));
                    }
                }
            }
        }
    }

    let jac = want_jacobian.then(|| {
        BlockJacobian::from_blocks(
            n,
            ordering,
            CsrMatrix::from_triplets(n, n, &tri[PP], false),
            CsrMatrix::from_triplets(n, n, &tri[PS], false),
            CsrMatrix::from_triplets(n, n, &tri[SP], false),
            CsrMatrix::from_triplets(n, n, &tri[SS], false),
        )
    });
    Ok((residual, jac))
}

/// Mass bookkeeping for one step, per phase `[wetting, non-wetting]`, using
/// the same flux kernels as the residual but never touching interior faces.
/// At a solved state, `storage_change + boundary_outflow - source_injection`
/// telescopes to the sum of residuals, which Newton has driven to zero.
#[derive(Debug, Clone, Copy)]
pub struct MassBalance {
    /// V * (xi_new - xi_old) summed over cells (kg).
    pub storage_change: [f64; 2],
    /// Net mass leaving through the boundary over the step (kg).
    pub boundary_outflow: [f64; 2],
    /// Mass injected by sources over the step (kg).
    pub source_injection: [f64; 2],
}

impl MassBalance {
    pub fn defect(&self, phase: usize) -> f64 {
        self.storage_change[phase] + self.boundary_outflow[phase]
            - self.source_injection[phase]
    }
}

pub fn mass_balance(
    inputs: &AssemblyInputs,
    state_new: &State,
    state_old: &State,
    dt: f64,
) -> Result<MassBalance> {
    validate(inputs, state_new, state_old, dt)?;
    let grid = inputs.grid;
    let rock = inputs.rock;
    let fluid = inputs.fluid;
    let volume = grid.cell_volume();
    let coeffs = cell_coeffs(inputs, state_new);

    let mut out = MassBalance {
        storage_change: [0.0; 2],
        boundary_outflow: [0.0; 2],
        source_injection: [0.0; 2],
    };
    for i in 0..grid.n_cells() {
        let ds = state_new.s_n[i] - state_old.s_n[i];
        let phi = rock.porosity[i];
        out.storage_change[0] += -volume * phi * fluid.rho_w * ds;
        out.storage_change[1] += volume * phi * fluid.rho_n * ds;
        out.source_injection[0] += dt * volume * inputs.src.q_w[i];
        out.source_injection[1] += dt * volume * inputs.src.q_n[i];
    }
    for (bf, cond) in grid.boundary_faces().iter().zip(&inputs.bc.per_face) {
        let i = bf.cell;
        match *cond {
            BoundaryCondition::NoFlow => {}
            BoundaryCondition::DirichletPressureSaturation { p_w, s_w } => {
                let axis = bf.axis.index();
                let h = grid.spacing(bf.axis);
                let k = rock.perm[i][axis];
                if k == 0.0 {
                    continue;
                }
                let tau = bf.area * k / (0.5 * h);
                let ghost = ghost_coeffs(inputs, p_w, s_w, grid.boundary_face_depth(bf));
                for phase in 0..2 {
                    let (pot_i, pot_b, mob_i, mob_b) = if phase == 0 {
                        (coeffs.pot_w[i], ghost.pot_w, coeffs.mob_w[i], ghost.mob_w)
                    } else {
                        (coeffs.pot_n[i], ghost.pot_n, coeffs.mob_n[i], ghost.mob_n)
                    };
                    let dphi = pot_i - pot_b;
                    let mob = if dphi > 0.0 { mob_i } else { mob_b };
                    out.boundary_outflow[phase] += dt * tau * mob * dphi;
                }
            }
            BoundaryCondition::NeumannTotalFlux { rate, s_w_inflow } => {
                if rate >= 0.0 {
                    out.boundary_outflow[0] -= dt * fluid.rho_w * rate * s_w_inflow;
                    out.boundary_outflow[1] -= dt * fluid.rho_n * rate * (1.0 - s_w_inflow);
                } else {
                    let q_out = -rate;
                    let eps = inputs.capillary.epsilon_s;
                    let s_w = 1.0 - state_new.s_n[i];
                    let (krw, krn) = relative_permeability(s_w, inputs.relperm, rock, eps);
                    let lam_w = krw / fluid.mu_w;
                    let lam_n = krn / fluid.mu_n;
                    let total = lam_w + lam_n;
                    let f_w = if total > 1e-30 { lam_w / total } else { 0.5 };
                    out.boundary_outflow[0] += dt * fluid.rho_w * q_out * f_w;
                    out.boundary_outflow[1] += dt * fluid.rho_n * q_out * (1.0 - f_w);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Axis, Side};
    use crate::rockfluid::CapillaryKind;

    const DAY: f64 = 86400.0;
    const MILLIDARCY: f64 = 9.869233e-16;

    fn table1_fluid() -> FluidProps {
        FluidProps { rho_w: 1000.0, rho_n: 700.0, mu_w: 1e-3, mu_n: 1e-2, g: 9.81 }
    }

    struct Setup {
        grid: Grid,
        rock: RockProps,
        fluid: FluidProps,
        capillary: CapillaryModel,
        relperm: RelPermModel,
        bc: BoundaryConditionSet,
        src: SourceTerm,
    }

    impl Setup {
        fn inputs(&self) -> AssemblyInputs<'_> {
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
    }

    fn uniform_setup(nx: usize, ny: usize, gravity: Option<Axis>) -> Setup {
        let grid = build_grid(nx, ny, 1, nx as f64, ny as f64, 1.0, gravity).unwrap();
        let n = grid.n_cells();
        let bc = BoundaryConditionSet::no_flow(&grid);
        Setup {
            rock: RockProps::uniform(n, 0.2, 100.0 * MILLIDARCY, 0.0, 0.0),
            fluid: table1_fluid(),
            capillary: CapillaryModel::linear(1e5),
            relperm: RelPermModel::Quadratic,
            bc,
            src: SourceTerm::zero(n),
            grid,
        }
    }

    /// Heterogeneous 4x4 setup exercising every assembly path: gravity,
    /// Brooks-Corey capillary pressure, Dirichlet and Neumann boundaries,
    /// and a source cell.
    fn heterogeneous_setup() -> (Setup, State, State) {
        let grid = build_grid(4, 4, 1, 8.0, 8.0, 1.0, Some(Axis::Y)).unwrap();
        let n = grid.n_cells();
        let mut rock = RockProps::uniform(n, 0.2, 100.0 * MILLIDARCY, 0.05, 0.05);
        for (i, k) in rock.perm.iter_mut().enumerate() {
            let f = 1.0 + 0.7 * ((i * 7 % 11) as f64) / 11.0;
            *k = [100.0 * MILLIDARCY * f, 60.0 * MILLIDARCY * f, 100.0 * MILLIDARCY];
        }
        let mut bc = BoundaryConditionSet::no_flow(&grid);
        for (f, cond) in grid.boundary_faces().iter().zip(bc.per_face.iter_mut()) {
            if f.axis == Axis::X && f.side == Side::High {
                *cond = BoundaryCondition::DirichletPressureSaturation { p_w: 9.0e4, s_w: 0.3 };
            }
            if f.axis == Axis::X && f.side == Side::Low && f.cell == 0 {
                *cond = BoundaryCondition::NeumannTotalFlux {
                    rate: 2.0 / DAY,
                    s_w_inflow: 1.0,
                };
            }
            if f.axis == Axis::Y && f.side == Side::Low && f.cell == 2 {
                *cond = BoundaryCondition::NeumannTotalFlux {
                    rate: -0.5 / DAY,
                    s_w_inflow: 1.0,
                };
            }
        }
        let mut src = SourceTerm::zero(n);
        src.q_w[5] = 1e-4;
        src.q_n[10] = -2e-5;
        let setup = Setup {
            rock,
            fluid: table1_fluid(),
            capillary: CapillaryModel::brooks_corey(1e6, 2.5),
            relperm: RelPermModel::Quadratic,
            bc,
            src,
            grid,
        };
        let n = setup.grid.n_cells();
        let mut state = State::uniform(n, 1e5, 0.5);
        for i in 0..n {
            let (ci, cj, _) = setup.grid.cell_coords(i);
            state.p_w[i] = 1.0e5 + 8.0e3 * ci as f64 - 3.0e3 * cj as f64;
            state.s_n[i] = 0.3 + 0.03 * ci as f64 + 0.015 * cj as f64;
        }
        let old = State::uniform(n, 1e5, 0.55);
        (setup, state, old)
    }

    #[test]
    fn equilibrium_residual_is_zero() {
        let setup = uniform_setup(4, 3, None);
        let state = State::uniform(setup.grid.n_cells(), 2.0e5, 0.4);
        let r = assemble_residual(&setup.inputs(), &state, &state, 20.0 * DAY,
            UnknownOrdering::VariableBlocked).unwrap();
        assert!(r.iter().all(|&v| v == 0.0), "nonzero equilibrium residual");
    }

    #[test]
    fn neumann_injection_term_matches_hand_value() {
        let mut setup = uniform_setup(2, 1, None);
        let q = 3.0 / DAY; // m^3/s into cell 0
        let face_idx = setup
            .grid
            .boundary_faces()
            .iter()
            .position(|f| f.axis == Axis::X && f.side == Side::Low)
            .unwrap();
        let state = State::uniform(2, 1.5e5, 0.45);
        let dt = 10.0 * DAY;
        let base = assemble_residual(&setup.inputs(), &state, &state, dt,
            UnknownOrdering::VariableBlocked).unwrap();
        setup.bc.per_face[face_idx] =
            BoundaryCondition::NeumannTotalFlux { rate: q, s_w_inflow: 1.0 };
        let with_q = assemble_residual(&setup.inputs(), &state, &state, dt,
            UnknownOrdering::VariableBlocked).unwrap();
        let volume = setup.grid.cell_volume();
        let expected = -setup.fluid.rho_w * q * dt / volume;
        assert!(((with_q[0] - base[0]) - expected).abs() <= 1e-12 * expected.abs());
        // non-wetting row untouched by pure water injection
        assert_eq!(with_q[2], base[2]);
    }

    #[test]
    fn residual_sum_telescopes_to_mass_balance() {
        let (setup, state, old) = heterogeneous_setup();
        let dt = 5.0 * DAY;
        let inputs = setup.inputs();
        let r = assemble_residual(&inputs, &state, &old, dt,
            UnknownOrdering::VariableBlocked).unwrap();
        let mb = mass_balance(&inputs, &state, &old, dt).unwrap();
        let n = setup.grid.n_cells();
        let volume = setup.grid.cell_volume();
        for phase in 0..2 {
            let rows = if phase == 0 { 0..n } else { n..2 * n };
            let residual_mass: f64 = r[rows].iter().map(|v| v * volume).sum();
            let balance = mb.defect(phase);
            let scale = mb.storage_change[phase]
                .abs()
                .max(mb.boundary_outflow[phase].abs())
                .max(mb.source_injection[phase].abs())
                .max(1e-300);
            assert!(
                (residual_mass - balance).abs() <= 1e-10 * scale,
                "phase {phase}: interior fluxes failed to telescope: \
                 {residual_mass} vs {balance} (scale {scale})"
            );
        }
    }

    fn dense_fd_jacobian(
        inputs: &AssemblyInputs,
        state: &State,
        old: &State,
        dt: f64,
    ) -> crate::dense::DenseMatrix {
        let n = state.n_cells();
        let mut fd = crate::dense::DenseMatrix::zeros(2 * n, 2 * n);
        let ord = UnknownOrdering::VariableBlocked;
        for col in 0..2 * n {
            let mut plus = state.clone();
            let mut minus = state.clone();
            let u = if col < n { state.p_w[col] } else { state.s_n[col - n] };
            let h = 1e-6 * (1.0 + u.abs());
            if col < n {
                plus.p_w[col] += h;
                minus.p_w[col] -= h;
            } else {
                plus.s_n[col - n] += h;
                minus.s_n[col - n] -= h;
            }
            let rp = assemble_residual(inputs, &plus, old, dt, ord).unwrap();
            let rm = assemble_residual(inputs, &minus, old, dt, ord).unwrap();
            for row in 0..2 * n {
                fd[(row, col)] = (rp[row] - rm[row]) / (2.0 * h);
            }
        }
        fd
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (setup, state, old) = heterogeneous_setup();
        let dt = 5.0 * DAY;
        let inputs = setup.inputs();
        let jac = assemble_jacobian(&inputs, &state, &old, dt,
            UnknownOrdering::VariableBlocked).unwrap();
        let analytic = jac.coupled().to_dense();
        let fd = dense_fd_jacobian(&inputs, &state, &old, dt);
        let floor = 1e-6 * analytic.max_abs();
        let mut worst = 0.0f64;
        for r in 0..analytic.n_rows() {
            for c in 0..analytic.n_cols() {
                let (a, f) = (analytic[(r, c)], fd[(r, c)]);
                let denom = a.abs().max(f.abs()).max(floor);
                worst = worst.max((a - f).abs() / denom);
            }
        }
        assert!(worst <= 1e-5, "max relative error {worst:.3e}");
    }

    #[test]
    fn zero_capillary_zero_velocity_gives_accumulation_diagonal() {
        let mut setup = uniform_setup(3, 3, None);
        setup.capillary = CapillaryModel { kind: CapillaryKind::Linear { p0: 0.0 }, epsilon_s: 1e-3 };
        let n = setup.grid.n_cells();
        let state = State::uniform(n, 1.2e5, 0.5);
        let jac = assemble_jacobian(&setup.inputs(), &state, &state, 10.0 * DAY,
            UnknownOrdering::VariableBlocked).unwrap();
        let a_ss = jac.block(Block::Ss);
        for i in 0..n {
            for (c, v) in a_ss.row(i) {
                if c == i {
                    let expected = setup.rock.porosity[i] * setup.fluid.rho_n;
                    assert!((v - expected).abs() < 1e-12 * expected);
                } else {
                    assert_eq!(v, 0.0, "off-diagonal A_ss entry at ({i},{c})");
                }
            }
        }
    }

    #[test]
    fn ordering_permutation_roundtrip() {
        let (setup, state, old) = heterogeneous_setup();
        let dt = 5.0 * DAY;
        let inputs = setup.inputs();
        let var = assemble_jacobian(&inputs, &state, &old, dt,
            UnknownOrdering::VariableBlocked).unwrap();
        let point = assemble_jacobian(&inputs, &state, &old, dt,
            UnknownOrdering::PointInterleaved).unwrap();
        // direct assembly in point ordering equals the symmetric permutation
        let permuted = var.reordered(UnknownOrdering::PointInterleaved);
        assert_eq!(permuted.coupled(), point.coupled());
        // explicit P J P^T of the coupled matrix gives the same result
        let n = setup.grid.n_cells();
        let perm = UnknownOrdering::VariableBlocked
            .permutation_to(UnknownOrdering::PointInterleaved, n);
        assert_eq!(&var.coupled().permute_symmetric(&perm), point.coupled());
        // and the round trip restores the original exactly
        let back = permuted.reordered(UnknownOrdering::VariableBlocked);
        assert_eq!(back.coupled(), var.coupled());
        // block views agree across orderings
        for b in [Block::Pp, Block::Ps, Block::Sp, Block::Ss] {
            assert_eq!(var.block(b), point.block(b));
        }
    }

    #[test]
    fn pressure_translation_invariance_without_gravity_or_dirichlet() {
        let mut setup = uniform_setup(4, 4, None);
        let n = setup.grid.n_cells();
        // heterogeneous saturations and pressures, Neumann + source only
        let face_idx = setup
            .grid
            .boundary_faces()
            .iter()
            .position(|f| f.axis == Axis::X && f.side == Side::Low)
            .unwrap();
        setup.bc.per_face[face_idx] =
            BoundaryCondition::NeumannTotalFlux { rate: 1.0 / DAY, s_w_inflow: 1.0 };
        setup.src.q_n[7] = 3e-5;
        let mut state = State::uniform(n, 1e5, 0.4);
        for i in 0..n {
            state.p_w[i] += 500.0 * (i as f64).sin();
            state.s_n[i] += 0.1 * ((i * 3 % 7) as f64) / 7.0;
        }
        let old = State::uniform(n, 1e5, 0.5);
        let dt = 2.0 * DAY;
        let r1 = assemble_residual(&setup.inputs(), &state, &old, dt,
            UnknownOrdering::VariableBlocked).unwrap();
        let mut shifted = state.clone();
        for p in shifted.p_w.iter_mut() {
            *p += 4.2e4;
        }
        let r2 = assemble_residual(&setup.inputs(), &shifted, &old, dt,
            UnknownOrdering::VariableBlocked).unwrap();
        for (a, b) in r1.iter().zip(&r2) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn doubling_dt_doubles_flux_and_source_parts() {
        let (setup, state, old) = heterogeneous_setup();
        let inputs = setup.inputs();
        let dt = 3.0 * DAY;
        let ord = UnknownOrdering::VariableBlocked;
        let r1 = assemble_residual(&inputs, &state, &old, dt, ord).unwrap();
        let r2 = assemble_residual(&inputs, &state, &old, 2.0 * dt, ord).unwrap();
        let n = setup.grid.n_cells();
        // storage part computed independently of the assembly
        for i in 0..n {
            let ds = state.s_n[i] - old.s_n[i];
            let storage_w = -setup.rock.porosity[i] * setup.fluid.rho_w * ds;
            let storage_n = setup.rock.porosity[i] * setup.fluid.rho_n * ds;
            for (row, storage) in [(i, storage_w), (n + i, storage_n)] {
                let flux1 = r1[row] - storage;
                let flux2 = r2[row] - storage;
                assert!(
                    (flux2 - 2.0 * flux1).abs() <= 1e-9 * flux1.abs().max(1e-12),
                    "row {row}: {flux2} vs 2*{flux1}"
                );
            }
        }
    }

    #[test]
    fn app_structurally_symmetric_and_diagonally_dominant() {
        // homogeneous gravity scenario, dt = 10 days
        let grid = build_grid(10, 10, 1, 20.0, 20.0, 1.0, Some(Axis::Y)).unwrap();
        let n = grid.n_cells();
        let mut bc = BoundaryConditionSet::no_flow(&grid);
        for (f, cond) in grid.boundary_faces().iter().zip(bc.per_face.iter_mut()) {
            if f.axis == Axis::X && f.side == Side::High && f.cell == n - 10 {
                *cond = BoundaryCondition::DirichletPressureSaturation { p_w: 0.0, s_w: 0.2 };
            }
            if f.axis == Axis::X && f.side == Side::Low && f.cell == 0 {
                *cond = BoundaryCondition::NeumannTotalFlux {
                    rate: 5.0 / DAY,
                    s_w_inflow: 1.0,
                };
            }
        }
        let setup = Setup {
            rock: RockProps::uniform(n, 0.2, 100.0 * MILLIDARCY, 0.0, 0.0),
            fluid: table1_fluid(),
            capillary: CapillaryModel::linear(1e5),
            relperm: RelPermModel::Quadratic,
            bc,
            src: SourceTerm::zero(n),
            grid,
        };
        let state = State::uniform(n, 1e5, 0.8);
        let jac = assemble_jacobian(&setup.inputs(), &state, &state, 10.0 * DAY,
            UnknownOrdering::VariableBlocked).unwrap();
        let a_pp = jac.block(Block::Pp);
        for i in 0..n {
            let mut diag = 0.0;
            let mut off = 0.0;
            for (c, v) in a_pp.row(i) {
                if c == i {
                    diag = v.abs();
                } else {
                    off += v.abs();
                    assert!(a_pp.get(c, i) != 0.0, "structural asymmetry at ({i},{c})");
                }
            }
            assert!(diag + 1e-12 * diag.max(1.0) >= off, "row {i}: {diag} < {off}");
        }
    }

    #[test]
    fn jacobian_offdiagonals_only_on_grid_faces() {
        let (setup, state, old) = heterogeneous_setup();
        let jac = assemble_jacobian(&setup.inputs(), &state, &old, 5.0 * DAY,
            UnknownOrdering::VariableBlocked).unwrap();
        let mut adjacent = std::collections::HashSet::new();
        for f in setup.grid.faces() {
            adjacent.insert((f.cell_i, f.cell_j));
            adjacent.insert((f.cell_j, f.cell_i));
        }
        for b in [Block::Pp, Block::Ps, Block::Sp, Block::Ss] {
            let m = jac.block(b);
            for r in 0..m.n_rows() {
                for (c, v) in m.row(r) {
                    if r != c && v != 0.0 {
                        assert!(adjacent.contains(&(r, c)), "{b:?} entry ({r},{c}) off-face");
                    }
                }
            }
        }
    }

    #[test]
    fn dimension_and_dt_validation() {
        let setup = uniform_setup(2, 2, None);
        let good = State::uniform(4, 1e5, 0.5);
        let bad = State::uniform(3, 1e5, 0.5);
        let ord = UnknownOrdering::VariableBlocked;
        assert!(assemble_residual(&setup.inputs(), &bad, &good, DAY, ord).is_err());
        assert!(assemble_residual(&setup.inputs(), &good, &good, 0.0, ord).is_err());
        let mut nan_state = good.clone();
        nan_state.p_w[1] = f64::NAN;
        assert!(assemble_residual(&setup.inputs(), &nan_state, &good, DAY, ord).is_err());
    }
}
