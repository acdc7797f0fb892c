//! Shared fixtures for unit tests: small two-phase problems producing
//! realistic coupled Jacobians.

use crate::discretize::{
    assemble_jacobian, AssemblyInputs, BlockJacobian, BoundaryCondition,
    BoundaryConditionSet, SourceTerm, State, UnknownOrdering,
};
use crate::grid::{build_grid, Axis, Grid, Side};
use crate::rockfluid::{CapillaryModel, FluidProps, RelPermModel, RockProps};

pub const DAY: f64 = 86400.0;
pub const MILLIDARCY: f64 = 9.869233e-16;

pub struct Fixture {
    pub grid: Grid,
    pub rock: RockProps,
    pub fluid: FluidProps,
    pub capillary: CapillaryModel,
    pub relperm: RelPermModel,
    pub bc: BoundaryConditionSet,
    pub src: SourceTerm,
    pub state: State,
    pub old: State,
    pub dt: f64,
}

impl Fixture {
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

    pub fn jacobian(&self, ordering: UnknownOrdering) -> BlockJacobian {
        assemble_jacobian(&self.inputs(), &self.state, &self.old, self.dt, ordering).unwrap()
    }
}

/// Water-flood fixture on an nx-by-ny grid with mild heterogeneity, a
/// Dirichlet outlet, a Neumann inlet, and a transient state. `capillary`
/// controls whether the problem is diffusion- or advection-dominated.
pub fn flood_fixture(nx: usize, ny: usize, capillary: CapillaryModel) -> Fixture {
    let grid = build_grid(nx, ny, 1, 2.0 * nx as f64, ny as f64, 1.0, Some(Axis::Y)).unwrap();
    let n = grid.n_cells();
    let mut rock = RockProps::uniform(n, 0.2, 100.0 * MILLIDARCY, 0.0, 0.0);
    for (i, k) in rock.perm.iter_mut().enumerate() {
        let f = 1.0 + 0.8 * (((i * 13 + 5) % 17) as f64) / 17.0;
        *k = [k[0] * f; 3];
    }
    let mut bc = BoundaryConditionSet::no_flow(&grid);
    for (f, cond) in grid.boundary_faces().iter().zip(bc.per_face.iter_mut()) {
        let (_, j, _) = grid.cell_coords(f.cell);
        if f.axis == Axis::X && f.side == Side::High && j == 0 {
            *cond = BoundaryCondition::DirichletPressureSaturation { p_w: 0.0, s_w: 0.2 };
        }
        if f.axis == Axis::X && f.side == Side::Low && j == ny - 1 {
            *cond = BoundaryCondition::NeumannTotalFlux {
                rate: 5.0 / DAY,
                s_w_inflow: 1.0,
            };
        }
    }
    let mut state = State::uniform(n, 1e5, 0.8);
    for i in 0..n {
        let (ci, cj, _) = grid.cell_coords(i);
        state.p_w[i] = 1.0e5 - 4.0e3 * ci as f64 + 1.5e3 * cj as f64;
        state.s_n[i] = 0.25 + 0.4 * (ci as f64) / nx as f64 + 0.1 * (cj as f64) / ny as f64;
    }
    let old = State::uniform(n, 1e5, 0.8);
    Fixture {
        rock,
        fluid: FluidProps { rho_w: 1000.0, rho_n: 700.0, mu_w: 1e-3, mu_n: 1e-2, g: 9.81 },
        capillary,
        relperm: RelPermModel::Quadratic,
        bc,
        src: SourceTerm::zero(n),
        state,
        old,
        dt: 20.0 * DAY,
        grid,
    }
}

/// Diffusion-dominated variant (large capillary derivative).
pub fn diffusion_fixture(nx: usize, ny: usize) -> Fixture {
    flood_fixture(nx, ny, CapillaryModel::linear(1e5))
}

/// Strongly advection-dominated variant (tiny capillary derivative).
pub fn advection_fixture(nx: usize, ny: usize) -> Fixture {
    flood_fixture(nx, ny, CapillaryModel::linear(1e3))
}
