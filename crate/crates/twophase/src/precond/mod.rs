//! The four preconditioning strategies for the coupled Jacobian: black-box
//! AMG on the point-ordered system, the two-stage combinative and additive
//! CPR-AMG variants, and the block factorization built on a SIMPLE-style
//! approximate Schur complement.
//!
//! Every strategy is a fixed linear operator for one Newton iteration; the
//! inner pressure/saturation/Schur solves are one AMG V-cycle by default and
//! can be swapped for exact dense factorizations, which is how the spectrum
//! study and the algorithm-versus-matrix-form tests are run.

pub mod amg;
pub mod ilu0;

use serde::{Deserialize, Serialize};

use crate::dense::DenseLu;
use crate::discretize::{Block, BlockJacobian, UnknownOrdering};
use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, LinearOperator};

pub use amg::{amg_setup, AmgHierarchy, AmgParams, AmgStats};
pub use ilu0::{ilu0_factor, Ilu0Factors};

/// Index maps between the coupled 2N vector and the pressure/saturation
/// subvectors for a given ordering.
#[derive(Debug, Clone, Copy)]
pub struct FieldRestriction {
    n_cells: usize,
    ordering: UnknownOrdering,
}

impl FieldRestriction {
    pub fn new(n_cells: usize, ordering: UnknownOrdering) -> Self {
        Self { n_cells, ordering }
    }

    pub fn restrict_p(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n_cells).map(|c| v[self.ordering.p_index(c, self.n_cells)]).collect()
    }

    pub fn restrict_s(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n_cells).map(|c| v[self.ordering.s_index(c, self.n_cells)]).collect()
    }

    pub fn prolong_p_add(&self, sub: &[f64], out: &mut [f64]) {
        for (c, &v) in sub.iter().enumerate() {
            out[self.ordering.p_index(c, self.n_cells)] += v;
        }
    }

    pub fn prolong_s_add(&self, sub: &[f64], out: &mut [f64]) {
        for (c, &v) in sub.iter().enumerate() {
            out[self.ordering.s_index(c, self.n_cells)] += v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrecondMethod {
    /// One AMG V-cycle on the point-ordered coupled system.
    CoupledAmg,
    /// Two-stage combinative: global ILU(0) plus a pressure correction.
    CprAmg1,
    /// Two-stage additive: pressure and saturation corrections.
    CprAmg2,
    /// Upper-triangular block solve with the approximate Schur complement.
    BlockFactorization,
    /// Exact dense inverse of the coupled Jacobian (debug/reference).
    ExactJacobian,
}

impl PrecondMethod {
    pub fn name(&self) -> &'static str {
        match self {
            PrecondMethod::CoupledAmg => "amg",
            PrecondMethod::CprAmg1 => "cpr-amg1",
            PrecondMethod::CprAmg2 => "cpr-amg2",
            PrecondMethod::BlockFactorization => "bf",
            PrecondMethod::ExactJacobian => "exact",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "amg" => Some(PrecondMethod::CoupledAmg),
            "cpr-amg1" => Some(PrecondMethod::CprAmg1),
            "cpr-amg2" => Some(PrecondMethod::CprAmg2),
            "bf" => Some(PrecondMethod::BlockFactorization),
            "exact" => Some(PrecondMethod::ExactJacobian),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreconditionerSpec {
    pub method: PrecondMethod,
    /// Strength threshold for scalar (pressure, saturation, Schur) systems.
    pub theta_scalar: f64,
    /// Strength threshold for the coupled point system.
    pub theta_coupled: f64,
    pub max_levels: usize,
    pub coarse_size: usize,
    /// V-cycles per inner solve.
    pub cycles: usize,
    /// Use the approximate Schur complement exactly as printed
    /// (A_pp - A_ps diag(A_ss)^-1 A_pp) instead of the SIMPLE form ending in
    /// A_sp.
    pub schur_as_printed: bool,
    /// Replace all inner V-cycles with exact dense solves.
    pub exact_inner: bool,
}

impl PreconditionerSpec {
    pub fn new(method: PrecondMethod) -> Self {
        Self {
            method,
            theta_scalar: 0.25,
            theta_coupled: 0.5,
            max_levels: 25,
            coarse_size: 64,
            cycles: 1,
            schur_as_printed: false,
            exact_inner: false,
        }
    }

    pub fn exact(mut self) -> Self {
        self.exact_inner = true;
        self
    }

    fn scalar_amg(&self) -> AmgParams {
        AmgParams {
            theta: self.theta_scalar,
            max_levels: self.max_levels,
            coarse_size: self.coarse_size,
            l1_smoother: false,
            functions: 1,
        }
    }

    fn coupled_amg(&self) -> AmgParams {
        AmgParams {
            theta: self.theta_coupled,
            max_levels: self.max_levels,
            coarse_size: self.coarse_size,
            l1_smoother: false,
            functions: if std::env::var("TWOPHASE_AMG_SCALAR_COUPLED").is_ok() { 1 } else { 2 },
        }
    }
}

impl Default for PreconditionerSpec {
    fn default() -> Self {
        Self::new(PrecondMethod::BlockFactorization)
    }
}

/// One inner subsystem solver: a V-cycle hierarchy or an exact dense
/// factorization.
pub enum InnerSolver {
    Amg(AmgHierarchy),
    Dense(DenseLu),
}

impl InnerSolver {
    fn build(a: &CsrMatrix, params: &AmgParams, cycles: usize, exact: bool) -> Result<Self> {
        if exact {
            Ok(InnerSolver::Dense(a.to_dense().lu()?))
        } else {
            Ok(InnerSolver::Amg(amg_setup(a, params)?.with_cycles(cycles)))
        }
    }

    pub fn stats(&self) -> Option<AmgStats> {
        match self {
            InnerSolver::Amg(h) => Some(h.stats()),
            InnerSolver::Dense(_) => None,
        }
    }
}

impl LinearOperator for InnerSolver {
    fn dim(&self) -> usize {
        match self {
            InnerSolver::Amg(h) => h.dim(),
            InnerSolver::Dense(lu) => lu.dim(),
        }
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        match self {
            InnerSolver::Amg(h) => h.apply_into(x, y),
            InnerSolver::Dense(lu) => lu.apply_into(x, y),
        }
    }
}

/// Per-cell inverse of the 2x2 nodal diagonal blocks, used to normalize the
/// coupled point-ordered system before handing it to scalar AMG. Without
/// this, rows mixing pressure-sized and saturation-sized couplings defeat
/// both the strength measure and the Gauss-Seidel smoother.
pub struct NodalScaling {
    n_cells: usize,
    ordering: UnknownOrdering,
    /// Row-major 2x2 inverse per cell.
    inv: Vec<[f64; 4]>,
}

impl NodalScaling {
    pub fn new(jac: &BlockJacobian) -> Result<Self> {
        let n = jac.n_cells();
        let ordering = jac.ordering();
        let coupled = jac.coupled();
        let mut inv = Vec::with_capacity(n);
        for c in 0..n {
            let (p, s) = (ordering.p_index(c, n), ordering.s_index(c, n));
            let a = coupled.get(p, p);
            let b = coupled.get(p, s);
            let d = coupled.get(s, p);
            let e = coupled.get(s, s);
            let det = a * e - b * d;
            if det.abs() < 1e-300 {
                return Err(Error::ZeroPivot { row: c, context: "nodal block scaling" });
            }
            inv.push([e / det, -b / det, -d / det, a / det]);
        }
        Ok(Self { n_cells: n, ordering, inv })
    }

    /// z = D_b^-1 r.
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let n = self.n_cells;
        let mut z = vec![0.0; 2 * n];
        for c in 0..n {
            let (p, s) = (self.ordering.p_index(c, n), self.ordering.s_index(c, n));
            let m = &self.inv[c];
            z[p] = m[0] * r[p] + m[1] * r[s];
            z[s] = m[2] * r[p] + m[3] * r[s];
        }
        z
    }

    /// D_b^-1 J as an explicit sparse matrix.
    pub fn normalized_matrix(&self, coupled: &CsrMatrix) -> CsrMatrix {
        let n = self.n_cells;
        let mut triplets = Vec::with_capacity(coupled.nnz());
        for c in 0..n {
            let (p, s) = (self.ordering.p_index(c, n), self.ordering.s_index(c, n));
            let m = &self.inv[c];
            for (col, v) in coupled.row(p) {
                triplets.push((p, col, m[0] * v));
            }
            for (col, v) in coupled.row(s) {
                triplets.push((p, col, m[1] * v));
                triplets.push((s, col, m[3] * v));
            }
            for (col, v) in coupled.row(p) {
                triplets.push((s, col, m[2] * v));
            }
        }
        CsrMatrix::from_triplets(2 * n, 2 * n, &triplets, false)
    }
}

/// SIMPLE approximate Schur complement S~ = A_pp - A_ps diag(A_ss)^-1 A_sp.
/// With `as_printed`, the trailing factor is A_pp instead of A_sp.
pub fn build_simple_schur(jac: &BlockJacobian, as_printed: bool) -> Result<CsrMatrix> {
    let a_pp = jac.block(Block::Pp);
    let a_ps = jac.block(Block::Ps);
    let a_ss = jac.block(Block::Ss);
    let diag = a_ss.diagonal();
    for (cell, d) in diag.iter().enumerate() {
        if d.abs() < 1e-300 {
            return Err(Error::ZeroSaturationDiagonal { cell });
        }
    }
    // A_ps * diag(A_ss)^-1 scales the columns of A_ps
    let mut scaled = a_ps.clone();
    {
        let cols = scaled.col_idx().to_vec();
        for (k, v) in scaled.values_mut().iter_mut().enumerate() {
            *v /= diag[cols[k]];
        }
    }
    let trailing = if as_printed { a_pp } else { jac.block(Block::Sp) };
    Ok(a_pp.sub(&scaled.matmul(trailing)))
}

/// Two-stage combinative application (CPR-AMG(1) with pluggable inner
/// solvers): global stage-one solve, then a pressure-block correction of the
/// updated residual.
pub fn apply_two_stage_combinative(
    coupled: &CsrMatrix,
    restr: &FieldRestriction,
    stage_one: &dyn LinearOperator,
    pressure_inv: &dyn LinearOperator,
    r: &[f64],
) -> Vec<f64> {
    let mut out = stage_one.apply(r);
    let ju = coupled.spmv(&out).expect("dims");
    let r1: Vec<f64> = r.iter().zip(&ju).map(|(ri, ji)| ri - ji).collect();
    let dp = pressure_inv.apply(&restr.restrict_p(&r1));
    restr.prolong_p_add(&dp, &mut out);
    out
}

/// Two-stage additive application (CPR-AMG(2)): pressure and saturation
/// corrections from the same updated residual.
pub fn apply_two_stage_additive(
    coupled: &CsrMatrix,
    restr: &FieldRestriction,
    stage_one: &dyn LinearOperator,
    pressure_inv: &dyn LinearOperator,
    saturation_inv: &dyn LinearOperator,
    r: &[f64],
) -> Vec<f64> {
    let mut out = stage_one.apply(r);
    let ju = coupled.spmv(&out).expect("dims");
    let r1: Vec<f64> = r.iter().zip(&ju).map(|(ri, ji)| ri - ji).collect();
    let dp = pressure_inv.apply(&restr.restrict_p(&r1));
    let ds = saturation_inv.apply(&restr.restrict_s(&r1));
    restr.prolong_p_add(&dp, &mut out);
    restr.prolong_s_add(&ds, &mut out);
    out
}

/// Block-factorization application: saturation solve, pressure residual
/// update through A_ps, Schur solve (the upper-triangular block solve).
pub fn apply_block_factorization(
    a_ps: &CsrMatrix,
    restr: &FieldRestriction,
    saturation_inv: &dyn LinearOperator,
    schur_inv: &dyn LinearOperator,
    r: &[f64],
) -> Vec<f64> {
    let s = saturation_inv.apply(&restr.restrict_s(r));
    let aps_s = a_ps.spmv(&s).expect("dims");
    let rp: Vec<f64> =
        restr.restrict_p(r).iter().zip(&aps_s).map(|(ri, ai)| ri - ai).collect();
    let p = schur_inv.apply(&rp);
    let mut out = vec![0.0; r.len()];
    restr.prolong_p_add(&p, &mut out);
    restr.prolong_s_add(&s, &mut out);
    out
}

/// A preconditioner built from one Jacobian, applied as y = M^-1 r in the
/// ordering of the Jacobian it was built from.
pub enum BuiltPreconditioner {
    CoupledAmg {
        /// Nodal-block normalization applied before the hierarchy.
        scaling: Option<NodalScaling>,
        inner: InnerSolver,
        dim: usize,
    },
    CprAmg1 {
        coupled: CsrMatrix,
        restr: FieldRestriction,
        ilu: Ilu0Factors,
        pressure: InnerSolver,
    },
    CprAmg2 {
        coupled: CsrMatrix,
        restr: FieldRestriction,
        ilu: Ilu0Factors,
        pressure: InnerSolver,
        saturation: InnerSolver,
    },
    BlockFactorization {
        a_ps: CsrMatrix,
        restr: FieldRestriction,
        saturation: InnerSolver,
        schur: InnerSolver,
        dim: usize,
    },
    ExactJacobian(DenseLu),
}

impl BuiltPreconditioner {
    /// AMG hierarchy statistics per subsystem, for the metrics output.
    pub fn amg_stats(&self) -> Vec<(&'static str, AmgStats)> {
        let mut out = Vec::new();
        match self {
            BuiltPreconditioner::CoupledAmg { inner, .. } => {
                if let Some(s) = inner.stats() {
                    out.push(("coupled", s));
                }
            }
            BuiltPreconditioner::CprAmg1 { pressure, .. } => {
                if let Some(s) = pressure.stats() {
                    out.push(("pressure", s));
                }
            }
            BuiltPreconditioner::CprAmg2 { pressure, saturation, .. } => {
                if let Some(s) = pressure.stats() {
                    out.push(("pressure", s));
                }
                if let Some(s) = saturation.stats() {
                    out.push(("saturation", s));
                }
            }
            BuiltPreconditioner::BlockFactorization { saturation, schur, .. } => {
                if let Some(s) = saturation.stats() {
                    out.push(("saturation", s));
                }
                if let Some(s) = schur.stats() {
                    out.push(("schur", s));
                }
            }
            BuiltPreconditioner::ExactJacobian(_) => {}
        }
        out
    }
}

impl LinearOperator for BuiltPreconditioner {
    fn dim(&self) -> usize {
        match self {
            BuiltPreconditioner::CoupledAmg { dim, .. } => *dim,
            BuiltPreconditioner::CprAmg1 { coupled, .. } => coupled.n_rows(),
            BuiltPreconditioner::CprAmg2 { coupled, .. } => coupled.n_rows(),
            BuiltPreconditioner::BlockFactorization { dim, .. } => *dim,
            BuiltPreconditioner::ExactJacobian(lu) => lu.dim(),
        }
    }

    fn apply_into(&self, r: &[f64], y: &mut [f64]) {
        let out = match self {
            BuiltPreconditioner::CoupledAmg { scaling, inner, .. } => match scaling {
                Some(s) => inner.apply(&s.apply(r)),
                None => inner.apply(r),
            },
            BuiltPreconditioner::CprAmg1 { coupled, restr, ilu, pressure } => {
                apply_two_stage_combinative(coupled, restr, ilu, pressure, r)
            }
            BuiltPreconditioner::CprAmg2 { coupled, restr, ilu, pressure, saturation } => {
                apply_two_stage_additive(coupled, restr, ilu, pressure, saturation, r)
            }
            BuiltPreconditioner::BlockFactorization { a_ps, restr, saturation, schur, .. } => {
                apply_block_factorization(a_ps, restr, saturation, schur, r)
            }
            BuiltPreconditioner::ExactJacobian(lu) => lu.solve(r),
        };
        y.copy_from_slice(&out);
    }
}

/// Build the preconditioner described by `spec` for one Jacobian. The
/// returned operator works in the ordering of `jac`.
pub fn build_preconditioner(
    spec: &PreconditionerSpec,
    jac: &BlockJacobian,
) -> Result<BuiltPreconditioner> {
    let n = jac.n_cells();
    let restr = FieldRestriction::new(n, jac.ordering());
    match spec.method {
        PrecondMethod::CoupledAmg => {
            if spec.exact_inner {
                return Ok(BuiltPreconditioner::CoupledAmg {
                    scaling: None,
                    inner: InnerSolver::Dense(jac.coupled().to_dense().lu()?),
                    dim: 2 * n,
                });
            }
            let scaling = NodalScaling::new(jac)?;
            let normalized = scaling.normalized_matrix(jac.coupled());
            Ok(BuiltPreconditioner::CoupledAmg {
                inner: InnerSolver::build(&normalized, &spec.coupled_amg(), spec.cycles, false)?,
                scaling: Some(scaling),
                dim: 2 * n,
            })
        }
        PrecondMethod::CprAmg1 => Ok(BuiltPreconditioner::CprAmg1 {
            coupled: jac.coupled().clone(),
            restr,
            ilu: ilu0_factor(jac.coupled())?,
            pressure: InnerSolver::build(
                jac.block(Block::Pp),
                &spec.scalar_amg(),
                spec.cycles,
                spec.exact_inner,
            )?,
        }),
        PrecondMethod::CprAmg2 => Ok(BuiltPreconditioner::CprAmg2 {
            coupled: jac.coupled().clone(),
            restr,
            ilu: ilu0_factor(jac.coupled())?,
            pressure: InnerSolver::build(
                jac.block(Block::Pp),
                &spec.scalar_amg(),
                spec.cycles,
                spec.exact_inner,
            )?,
            saturation: InnerSolver::build(
                jac.block(Block::Ss),
                &spec.scalar_amg(),
                spec.cycles,
                spec.exact_inner,
            )?,
        }),
        PrecondMethod::BlockFactorization => {
            let schur = build_simple_schur(jac, spec.schur_as_printed)?;
            Ok(BuiltPreconditioner::BlockFactorization {
                a_ps: jac.block(Block::Ps).clone(),
                restr,
                saturation: InnerSolver::build(
                    jac.block(Block::Ss),
                    &spec.scalar_amg(),
                    spec.cycles,
                    spec.exact_inner,
                )?,
                schur: InnerSolver::build(
                    &schur,
                    &spec.scalar_amg(),
                    spec.cycles,
                    spec.exact_inner,
                )?,
                dim: 2 * n,
            })
        }
        PrecondMethod::ExactJacobian => {
            Ok(BuiltPreconditioner::ExactJacobian(jac.coupled().to_dense().lu()?))
        }
    }
}
