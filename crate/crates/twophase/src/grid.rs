//! Structured Cartesian mesh: cell geometry, interior faces, boundary faces,
//! and the depth field that feeds the gravity term.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Side {
    Low,
    High,
}

/// Face between two interior cells. `dist` is the cell-center distance.
#[derive(Debug, Clone, Copy)]
pub struct Face {
    pub cell_i: usize,
    pub cell_j: usize,
    pub area: f64,
    pub dist: f64,
    pub axis: Axis,
}

/// Face on the domain boundary, owned by a single cell.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryFace {
    pub cell: usize,
    pub area: f64,
    pub axis: Axis,
    pub side: Side,
}

/// Uniform structured grid. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub gravity_axis: Option<Axis>,
    cell_depth: Vec<f64>,
    faces: Vec<Face>,
    boundary_faces: Vec<BoundaryFace>,
}

impl Grid {
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy * self.dz
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny && k < self.nz);
        (k * self.ny + j) * self.nx + i
    }

    pub fn cell_coords(&self, cell: usize) -> (usize, usize, usize) {
        let i = cell % self.nx;
        let j = (cell / self.nx) % self.ny;
        let k = cell / (self.nx * self.ny);
        (i, j, k)
    }

    pub fn spacing(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.dx,
            Axis::Y => self.dy,
            Axis::Z => self.dz,
        }
    }

    /// Cell-centered depth along the gravity axis; zero everywhere when
    /// the scenario has no gravity axis.
    pub fn depth(&self, cell: usize) -> f64 {
        self.cell_depth[cell]
    }

    /// Depth of a boundary face center. Offset by half a cell when the face
    /// is normal to the gravity axis, so hydrostatic Dirichlet data is
    /// honored exactly.
    pub fn boundary_face_depth(&self, bf: &BoundaryFace) -> f64 {
        let mut d = self.cell_depth[bf.cell];
        if Some(bf.axis) == self.gravity_axis {
            let half = 0.5 * self.spacing(bf.axis);
            d += match bf.side {
                Side::Low => -half,
                Side::High => half,
            };
        }
        d
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary_faces
    }
}

/// Build a uniform grid over a box of extent `lx x ly x lz`.
pub fn build_grid(
    nx: usize,
    ny: usize,
    nz: usize,
    lx: f64,
    ly: f64,
    lz: f64,
    gravity_axis: Option<Axis>,
) -> Result<Grid> {
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::InvalidGrid("cell counts must be >= 1".into()));
    }
    if !(lx > 0.0 && ly > 0.0 && lz > 0.0) {
        return Err(Error::InvalidGrid("domain lengths must be positive".into()));
    }
    let (dx, dy, dz) = (lx / nx as f64, ly / ny as f64, lz / nz as f64);
    let n = nx * ny * nz;
    let idx = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;

    let mut cell_depth = vec![0.0; n];
    if let Some(axis) = gravity_axis {
        let (spacing, coord_of) = match axis {
            Axis::X => (dx, 0usize),
            Axis::Y => (dy, 1),
            Axis::Z => (dz, 2),
        };
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let c = [i, j, k][coord_of];
                    cell_depth[idx(i, j, k)] = (c as f64 + 0.5) * spacing;
                }
            }
        }
    }

    let mut faces = Vec::new();
    let mut boundary_faces = Vec::new();
    let areas = [dy * dz, dx * dz, dx * dy];
    let dists = [dx, dy, dz];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let me = idx(i, j, k);
                // interior faces toward the high side of each axis
                if i + 1 < nx {
                    faces.push(Face {
                        cell_i: me,
                        cell_j: idx(i + 1, j, k),
                        area: areas[0],
                        dist: dists[0],
                        axis: Axis::X,
                    });
                }
                if j + 1 < ny {
                    faces.push(Face {
                        cell_i: me,
                        cell_j: idx(i, j + 1, k),
                        area: areas[1],
                        dist: dists[1],
                        axis: Axis::Y,
                    });
                }
                if k + 1 < nz {
                    faces.push(Face {
                        cell_i: me,
                        cell_j: idx(i, j, k + 1),
                        area: areas[2],
                        dist: dists[2],
                        axis: Axis::Z,
                    });
                }
                let mut bf = |axis: Axis, side: Side| {
                    boundary_faces.push(BoundaryFace {
                        cell: me,
                        area: areas[axis.index()],
                        axis,
                        side,
                    })
                };
                if i == 0 {
                    bf(Axis::X, Side::Low);
                }
                if i + 1 == nx {
                    bf(Axis::X, Side::High);
                }
                if j == 0 {
                    bf(Axis::Y, Side::Low);
                }
                if j + 1 == ny {
                    bf(Axis::Y, Side::High);
                }
                if k == 0 {
                    bf(Axis::Z, Side::Low);
                }
                if k + 1 == nz {
                    bf(Axis::Z, Side::High);
                }
            }
        }
    }

    Ok(Grid { nx, ny, nz, dx, dy, dz, gravity_axis, cell_depth, faces, boundary_faces })
}

/// Face permeability by distance-weighted harmonic averaging. A zero
/// permeability on either side blocks the face entirely.
pub fn harmonic_face_permeability(k_i: f64, k_j: f64, dx_i: f64, dx_j: f64) -> f64 {
    debug_assert!(k_i >= 0.0 && k_j >= 0.0 && dx_i > 0.0 && dx_j > 0.0);
    let denom = dx_i * k_j + dx_j * k_i;
    if denom == 0.0 {
        return 0.0;
    }
    (dx_i + dx_j) * k_i * k_j / denom
}
