//! Classical algebraic multigrid: Ruge-Stueben coarsening on the
//! absolute-value strength graph, classical (direct + standard)
//! interpolation, Galerkin coarse operators, forward Gauss-Seidel smoothing,
//! and a dense direct solve on the coarsest level.

use std::collections::BinaryHeap;

use crate::dense::DenseLu;
use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AmgParams {
    /// Strength-of-connection threshold.
    pub theta: f64,
    pub max_levels: usize,
    /// Stop coarsening at or below this size.
    pub coarse_size: usize,
    /// Damp the Gauss-Seidel update by the l1 row norm instead of the
    /// diagonal. Plain GS diverges on rows of the coupled system where the
    /// upwind saturation couplings dwarf the diagonal; the l1 form stays
    /// bounded there.
    pub l1_smoother: bool,
    /// Number of interleaved unknowns per grid point. With more than one,
    /// strength and interpolation stay within each unknown (the systems
    /// "unknown approach"); cross-couplings act through the Galerkin
    /// products and the smoother.
    pub functions: usize,
}

impl Default for AmgParams {
    fn default() -> Self {
        Self { theta: 0.25, max_levels: 25, coarse_size: 64, l1_smoother: false, functions: 1 }
    }
}

struct AmgLevel {
    a: CsrMatrix,
    prolongation: CsrMatrix,
    restriction: CsrMatrix,
    cf: Vec<PointKind>,
    /// Per-row smoother scaling: the diagonal, or the l1 row norm.
    smoother_scale: Vec<f64>,
}

/// Multigrid hierarchy for one matrix. Application runs one or more V(1,1)
/// cycles from a zero initial guess, which makes it a fixed linear operator.
pub struct AmgHierarchy {
    levels: Vec<AmgLevel>,
    coarse_a: CsrMatrix,
    coarse_solver: DenseLu,
    fine_nnz: usize,
    fine_n: usize,
    cycles: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct AmgStats {
    pub levels: usize,
    pub operator_complexity: f64,
    pub grid_complexity: f64,
    pub coarsest_size: usize,
}

// Largest matrix we are willing to hand to the dense coarse solver when
// coarsening stagnates early.
const MAX_DENSE_COARSE: usize = 4000;

pub fn amg_setup(a: &CsrMatrix, params: &AmgParams) -> Result<AmgHierarchy> {
    assert_eq!(a.n_rows(), a.n_cols(), "AMG needs a square matrix");
    let fine_n = a.n_rows();
    let fine_nnz = a.nnz();
    let mut levels = Vec::new();
    let mut current = a.clone();

    while current.n_rows() > params.coarse_size && levels.len() + 1 < params.max_levels {
        let n = current.n_rows();
        let functions = params.functions.max(1);
        let strong = strength_graph(&current, params.theta, functions);
        let cf = coarsen(&current, &strong);
        let n_coarse = cf.iter().filter(|&&k| k == PointKind::Coarse).count();
        if n_coarse == 0 || n_coarse >= n {
            break; // stagnation: solve this level directly
        }
        let prolongation = classical_interpolation(&current, &strong, &cf, n_coarse, functions);
        let restriction = prolongation.transpose();
        let coarse = restriction.matmul(&current).matmul(&prolongation);
        let smoother_scale = smoother_scaling(&current, params.l1_smoother);
        levels.push(AmgLevel { a: current, prolongation, restriction, cf, smoother_scale });
        current = coarse;
    }

    if current.n_rows() > MAX_DENSE_COARSE {
        return Err(Error::InvalidGrid(format!(
            "AMG coarsening stalled at size {}",
            current.n_rows()
        )));
    }
    let coarse_solver = current.to_dense().lu().map_err(|_| Error::ZeroPivot {
        row: 0,
        context: "AMG coarsest-level factorization",
    })?;
    Ok(AmgHierarchy {
        levels,
        coarse_a: current,
        coarse_solver,
        fine_nnz,
        fine_n,
        cycles: 1,
    })
}

impl AmgHierarchy {
    pub fn with_cycles(mut self, cycles: usize) -> Self {
        assert!(cycles >= 1);
        self.cycles = cycles;
        self
    }

    pub fn stats(&self) -> AmgStats {
        let mut nnz_total = self.coarse_a.nnz();
        let mut n_total = self.coarse_a.n_rows();
        for l in &self.levels {
            nnz_total += l.a.nnz();
            n_total += l.a.n_rows();
        }
        AmgStats {
            levels: self.levels.len() + 1,
            operator_complexity: nnz_total as f64 / self.fine_nnz.max(1) as f64,
            grid_complexity: n_total as f64 / self.fine_n.max(1) as f64,
            coarsest_size: self.coarse_a.n_rows(),
        }
    }

    pub fn level_matrix(&self, level: usize) -> &CsrMatrix {
        if level < self.levels.len() {
            &self.levels[level].a
        } else {
            &self.coarse_a
        }
    }

    pub fn level_transfer(&self, level: usize) -> (&CsrMatrix, &CsrMatrix) {
        (&self.levels[level].restriction, &self.levels[level].prolongation)
    }

    pub fn cf_splitting(&self, level: usize) -> &[PointKind] {
        &self.levels[level].cf
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len() + 1
    }

    /// One V(1,1) cycle for A x = b starting from x = 0.
    pub fn vcycle(&self, b: &[f64]) -> Vec<f64> {
        self.cycle_at(0, b)
    }

    fn cycle_at(&self, level: usize, b: &[f64]) -> Vec<f64> {
        if level == self.levels.len() {
            return self.coarse_solver.solve(b);
        }
        let lvl = &self.levels[level];
        let n = lvl.a.n_rows();
        let mut x = vec![0.0; n];
        scaled_gauss_seidel_forward(&lvl.a, &lvl.smoother_scale, b, &mut x);
        // residual and coarse correction
        let mut r = vec![0.0; n];
        lvl.a.spmv_into(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let rc = lvl.restriction.spmv(&r).expect("restriction dims");
        let xc = self.cycle_at(level + 1, &rc);
        let correction = lvl.prolongation.spmv(&xc).expect("prolongation dims");
        for (xi, ci) in x.iter_mut().zip(&correction) {
            *xi += ci;
        }
        scaled_gauss_seidel_forward(&lvl.a, &lvl.smoother_scale, b, &mut x);
        x
    }
}

impl LinearOperator for AmgHierarchy {
    fn dim(&self) -> usize {
        self.fine_n
    }

    fn apply_into(&self, b: &[f64], y: &mut [f64]) {
        if self.cycles == 1 {
            let x = self.vcycle(b);
            y.copy_from_slice(&x);
            return;
        }
        let a = self.level_matrix(0);
        let mut x = vec![0.0; self.fine_n];
        let mut r = b.to_vec();
        for _ in 0..self.cycles {
            let dx = self.vcycle(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
            a.spmv_into(&x, &mut r);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
        }
        y.copy_from_slice(&x);
    }
}

/// One forward Gauss-Seidel sweep (the serial form of hybrid GS/SOR).
pub fn gauss_seidel_forward(a: &CsrMatrix, b: &[f64], x: &mut [f64]) {
    let n = a.n_rows();
    for i in 0..n {
        let mut acc = b[i];
        let mut diag = 0.0;
        for (c, v) in a.row(i) {
            if c == i {
                diag = v;
            } else {
                acc -= v * x[c];
            }
        }
        if diag.abs() > 1e-300 {
            x[i] = acc / diag;
        }
    }
}

fn smoother_scaling(a: &CsrMatrix, l1: bool) -> Vec<f64> {
    let n = a.n_rows();
    let mut scale = vec![0.0; n];
    for i in 0..n {
        let mut diag = 0.0;
        let mut l1_norm = 0.0;
        for (c, v) in a.row(i) {
            if c == i {
                diag = v;
            }
            l1_norm += v.abs();
        }
        scale[i] = if l1 {
            // keep the diagonal's sign so the update still points downhill
            if diag < 0.0 {
                -l1_norm
            } else {
                l1_norm
            }
        } else {
            diag
        };
    }
    scale
}

/// Forward Gauss-Seidel with a per-row scaling:
/// x_i += (b - A x)_i / scale_i.
fn scaled_gauss_seidel_forward(a: &CsrMatrix, scale: &[f64], b: &[f64], x: &mut [f64]) {
    let n = a.n_rows();
    for i in 0..n {
        let mut acc = b[i];
        for (c, v) in a.row(i) {
            acc -= v * x[c];
        }
        if scale[i].abs() > 1e-300 {
            x[i] += acc / scale[i];
        }
    }
}

/// Strong connections per row: j is strong for i when
/// |a_ij| >= theta * max_{k != i} |a_ik|.
fn strength_graph(a: &CsrMatrix, theta: f64, functions: usize) -> Vec<Vec<usize>> {
    let n = a.n_rows();
    let mut strong = vec![Vec::new(); n];
    for i in 0..n {
        let mut max_off = 0.0f64;
        for (c, v) in a.row(i) {
            if c != i && c % functions == i % functions {
                max_off = max_off.max(v.abs());
            }
        }
        if max_off == 0.0 {
            continue;
        }
        let threshold = theta * max_off;
        for (c, v) in a.row(i) {
            if c != i && c % functions == i % functions && v.abs() >= threshold {
                strong[i].push(c);
            }
        }
    }
    strong
}

/// Ruge-Stueben C/F splitting: a weighted greedy independent set on the
/// strength graph, followed by a second pass that guarantees every strong
/// F-F pair shares a coarse interpolatory point.
fn coarsen(a: &CsrMatrix, strong: &[Vec<usize>]) -> Vec<PointKind> {
    let n = a.n_rows();
    // transpose of the strength graph: who depends on me
    let mut influenced = vec![Vec::new(); n];
    for (i, s) in strong.iter().enumerate() {
        for &j in s {
            influenced[j].push(i);
        }
    }

    #[derive(Clone, Copy, PartialEq, Eq)]
    enum Mark {
        Undecided,
        C,
        F,
    }
    let mut mark = vec![Mark::Undecided; n];
    let mut weight: Vec<i64> = influenced.iter().map(|v| v.len() as i64).collect();

    // max-heap with lazy invalidation; ties broken toward the lowest index
    let mut heap: BinaryHeap<(i64, std::cmp::Reverse<usize>)> = (0..n)
        .map(|i| (weight[i], std::cmp::Reverse(i)))
        .collect();

    while let Some((w, std::cmp::Reverse(i))) = heap.pop() {
        if mark[i] != Mark::Undecided || w != weight[i] {
            continue;
        }
        mark[i] = Mark::C;
        for &j in &influenced[i] {
            if mark[j] == Mark::Undecided {
                mark[j] = Mark::F;
                // new F points make their undecided influences more attractive
                for &k in &strong[j] {
                    if mark[k] == Mark::Undecided {
                        weight[k] += 1;
                        heap.push((weight[k], std::cmp::Reverse(k)));
                    }
                }
            }
        }
        for &j in &strong[i] {
            if mark[j] == Mark::Undecided {
                weight[j] -= 1;
                heap.push((weight[j], std::cmp::Reverse(j)));
            }
        }
    }
    for m in mark.iter_mut() {
        if *m == Mark::Undecided {
            *m = Mark::F;
        }
    }

    // second pass: strong F-F pairs need a common C point among the first
    // point's interpolatory set; promote the neighbor when they lack one
    for i in 0..n {
        if mark[i] != Mark::F {
            continue;
        }
        if !strong[i].is_empty() && strong[i].iter().all(|&j| mark[j] != Mark::C) {
            mark[i] = Mark::C;
            continue;
        }
        for idx in 0..strong[i].len() {
            let j = strong[i][idx];
            if mark[j] != Mark::F {
                continue;
            }
            let has_common = strong[j]
                .iter()
                .any(|&k| mark[k] == Mark::C && strong[i].contains(&k));
            if !has_common {
                mark[j] = Mark::C;
            }
        }
    }

    mark.into_iter()
        .map(|m| if m == Mark::C { PointKind::Coarse } else { PointKind::Fine })
        .collect()
}

/// Classical Ruge-Stueben interpolation. C points inject; F points combine
/// their strong C neighbors directly and distribute strong F connections
/// through shared C points; weak connections are lumped into the diagonal.
/// Drop relatively small interpolation weights and bound the stencil,
/// rescaling the survivors to preserve the row sum. Long fabricated tails
/// on rough rows destabilize the coarse correction and inflate complexity.
fn truncate_interpolation_row(weights: &mut Vec<(usize, f64)>) {
    const REL_DROP: f64 = 0.2;
    const MAX_ELEMENTS: usize = 4;
    if weights.is_empty() {
        return;
    }
    let sum_before: f64 = weights.iter().map(|(_, w)| w).sum();
    let w_max = weights.iter().fold(0.0f64, |m, (_, w)| m.max(w.abs()));
    weights.retain(|(_, w)| w.abs() >= REL_DROP * w_max);
    if weights.len() > MAX_ELEMENTS {
        weights.sort_by(|a, b| b.1.abs().partial_cmp(&a.1.abs()).unwrap());
        weights.truncate(MAX_ELEMENTS);
        weights.sort_by_key(|(c, _)| *c);
    }
    let sum_after: f64 = weights.iter().map(|(_, w)| w).sum();
    if sum_after.abs() > 1e-300 {
        let rescale = sum_before / sum_after;
        // only rescale when it stays a modest correction
        if rescale.abs() <= 4.0 && rescale.abs() >= 0.25 {
            for (_, w) in weights.iter_mut() {
                *w *= rescale;
            }
        }
    }
}

fn classical_interpolation(
    a: &CsrMatrix,
    strong: &[Vec<usize>],
    cf: &[PointKind],
    n_coarse: usize,
    functions: usize,
) -> CsrMatrix {
    let n = a.n_rows();
    let mut coarse_index = vec![usize::MAX; n];
    let mut next = 0;
    for i in 0..n {
        if cf[i] == PointKind::Coarse {
            coarse_index[i] = next;
            next += 1;
        }
    }

    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut is_strong = vec![false; n];
    let mut in_ci = vec![false; n];

    for i in 0..n {
        if cf[i] == PointKind::Coarse {
            triplets.push((i, coarse_index[i], 1.0));
            continue;
        }
        for &j in &strong[i] {
            is_strong[j] = true;
        }
        let c_i: Vec<usize> =
            strong[i].iter().copied().filter(|&j| cf[j] == PointKind::Coarse).collect();
        if c_i.is_empty() {
            // nothing to interpolate from; rely on smoothing for this point
            for &j in &strong[i] {
                is_strong[j] = false;
            }
            continue;
        }
        for &j in &c_i {
            in_ci[j] = true;
        }

        let mut diag = 0.0;
        let mut direct = vec![0.0; c_i.len()];
        let mut a_ii = 0.0;
        for (j, v) in a.row(i) {
            if j == i {
                a_ii = v;
            } else if j % functions != i % functions {
                // cross-variable coupling: outside this unknown's subproblem
                continue;
            } else if !is_strong[j] {
                // weak connection: lump into the diagonal
                diag += v;
            }
        }
        diag += a_ii;

        for (j, a_ij) in a.row(i) {
            if j == i || j % functions != i % functions || !is_strong[j] {
                continue;
            }
            if cf[j] == PointKind::Coarse {
                if let Some(pos) = c_i.iter().position(|&c| c == j) {
                    direct[pos] += a_ij;
                }
                continue;
            }
            // strong F neighbor m = j: distribute a_im over C_i through the
            // entries of row m that oppose m's diagonal sign (the classical
            // sign filter; same-sign couplings must not flip weight signs)
            let m_diag_sign = if a.get(j, j) < 0.0 { -1.0 } else { 1.0 };
            let filtered = |v: f64| if v * m_diag_sign < 0.0 { v } else { 0.0 };
            let mut denom = 0.0;
            for (k, a_mk) in a.row(j) {
                if in_ci[k] {
                    denom += filtered(a_mk);
                }
            }
            if denom.abs() < 1e-300 {
                // cannot distribute; treat the connection as weak
                diag += a_ij;
                continue;
            }
            for (k, a_mk) in a.row(j) {
                if in_ci[k] && filtered(a_mk) != 0.0 {
                    let pos = c_i.iter().position(|&c| c == k).unwrap();
                    direct[pos] += a_ij * a_mk / denom;
                }
            }
        }

        if diag.abs() > 1e-300 {
            let mut weights: Vec<(usize, f64)> = c_i
                .iter()
                .zip(&direct)
                .filter_map(|(&j, &d)| {
                    let w = -d / diag;
                    (w != 0.0).then_some((coarse_index[j], w))
                })
                .collect();
            truncate_interpolation_row(&mut weights);
            for (col, w) in weights {
                triplets.push((i, col, w));
            }
        }

        for &j in &strong[i] {
            is_strong[j] = false;
        }
        for &j in &c_i {
            in_ci[j] = false;
        }
    }
    CsrMatrix::from_triplets(n, n_coarse, &triplets, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{norm2, poisson_2d};

    fn poisson_1d(n: usize) -> CsrMatrix {
        let mut triplets = Vec::new();
        for i in 0..n {
            triplets.push((i, i, 2.0));
            if i > 0 {
                triplets.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                triplets.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &triplets, false)
    }

    #[test]
    fn one_dimensional_poisson_coarsening_alternates() {
        let a = poisson_1d(9);
        let strong = strength_graph(&a, 0.25, 1);
        let cf = coarsen(&a, &strong);
        let coarse: Vec<usize> = (0..9).filter(|&i| cf[i] == PointKind::Coarse).collect();
        assert!(
            coarse.len() == 4 || coarse.len() == 5,
            "unexpected coarse size {}: {coarse:?}",
            coarse.len()
        );
        // no two adjacent C points, every F point has a strong C neighbor
        for w in coarse.windows(2) {
            assert!(w[1] - w[0] >= 2, "adjacent C points in {coarse:?}");
        }
        for i in 0..9 {
            if cf[i] == PointKind::Fine {
                assert!(
                    strong[i].iter().any(|&j| cf[j] == PointKind::Coarse),
                    "F point {i} has no strong C neighbor"
                );
            }
        }
    }

    #[test]
    fn diagonal_matrix_collapses_to_direct_solve() {
        let triplets: Vec<_> = (0..50).map(|i| (i, i, 1.0 + i as f64)).collect();
        let a = CsrMatrix::from_triplets(50, 50, &triplets, false);
        let h = amg_setup(&a, &AmgParams { coarse_size: 10, ..Default::default() }).unwrap();
        assert_eq!(h.n_levels(), 1, "nothing to coarsen on a diagonal matrix");
        let r: Vec<f64> = (0..50).map(|i| (i as f64).cos()).collect();
        let x = h.vcycle(&r);
        let ax = a.spmv(&x).unwrap();
        for (axi, ri) in ax.iter().zip(&r) {
            assert!((axi - ri).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_rhs_gives_zero_correction() {
        let a = poisson_2d(8, 8);
        let h = amg_setup(&a, &AmgParams::default()).unwrap();
        let x = h.vcycle(&vec![0.0; a.n_rows()]);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn galerkin_condition_holds() {
        let a = poisson_2d(10, 10);
        let params = AmgParams { coarse_size: 8, ..Default::default() };
        let h = amg_setup(&a, &params).unwrap();
        assert!(h.n_levels() >= 2);
        for level in 0..h.n_levels() - 1 {
            let (r, p) = h.level_transfer(level);
            let fine = h.level_matrix(level);
            let coarse = h.level_matrix(level + 1);
            let rap = r.matmul(fine).matmul(p);
            let scale = coarse.max_abs();
            let err = rap.sub(coarse).max_abs();
            assert!(err <= 1e-12 * scale, "level {level}: Galerkin defect {err}");
        }
    }

    #[test]
    fn every_fine_point_interpolates_from_a_coarse_point() {
        let a = poisson_2d(12, 12);
        let h = amg_setup(&a, &AmgParams::default()).unwrap();
        for level in 0..h.n_levels() - 1 {
            let (_, p) = h.level_transfer(level);
            for (i, kind) in h.cf_splitting(level).iter().enumerate() {
                if *kind == PointKind::Fine {
                    assert!(
                        p.row(i).count() >= 1,
                        "level {level}: F point {i} has an empty interpolation row"
                    );
                }
            }
        }
    }

    #[test]
    fn coarse_sizes_strictly_decrease() {
        let a = poisson_2d(16, 16);
        let h = amg_setup(&a, &AmgParams::default()).unwrap();
        for level in 0..h.n_levels() - 1 {
            assert!(
                h.level_matrix(level + 1).n_rows() < h.level_matrix(level).n_rows()
            );
        }
        assert!(h.level_matrix(h.n_levels() - 1).n_rows() <= 64);
    }

    #[test]
    fn operator_complexity_reasonable_on_poisson() {
        let a = poisson_2d(32, 32);
        let h = amg_setup(&a, &AmgParams::default()).unwrap();
        let stats = h.stats();
        assert!(
            stats.operator_complexity <= 3.0,
            "operator complexity {}",
            stats.operator_complexity
        );
        assert!(stats.levels >= 3);
    }

    #[test]
    fn vcycle_contracts_error_in_energy_norm() {
        let a = poisson_2d(32, 32);
        let n = a.n_rows();
        let h = amg_setup(&a, &AmgParams::default()).unwrap();
        // manufactured solution, b = A x*
        let x_true: Vec<f64> = (0..n).map(|i| ((i * 37 % 101) as f64) / 101.0 - 0.5).collect();
        let b = a.spmv(&x_true).unwrap();
        let energy = |e: &[f64]| {
            let ae = a.spmv(e).unwrap();
            crate::sparse::dot(e, &ae).max(0.0).sqrt()
        };
        let mut x = vec![0.0; n];
        let mut rates = Vec::new();
        let mut prev = energy(&x_true);
        for _ in 0..10 {
            // x += vcycle(b - A x)
            let mut r = a.spmv(&x).unwrap();
            for (ri, bi) in r.iter_mut().zip(&b) {
                *ri = bi - *ri;
            }
            let dx = h.vcycle(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
            let e: Vec<f64> = x.iter().zip(&x_true).map(|(a, b)| a - b).collect();
            let now = energy(&e);
            rates.push(now / prev);
            prev = now;
        }
        let avg_rate = rates.iter().product::<f64>().powf(1.0 / rates.len() as f64);
        assert!(avg_rate <= 0.2, "V-cycle contraction {avg_rate:.3}");
    }

    #[test]
    fn multi_cycle_application_reduces_residual_further() {
        let a = poisson_2d(16, 16);
        let n = a.n_rows();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.13).sin()).collect();
        let one = amg_setup(&a, &AmgParams::default()).unwrap();
        let two = amg_setup(&a, &AmgParams::default()).unwrap().with_cycles(2);
        let resid = |x: &[f64]| {
            let ax = a.spmv(x).unwrap();
            let d: Vec<f64> = ax.iter().zip(&b).map(|(axi, bi)| bi - axi).collect();
            norm2(&d)
        };
        let r1 = resid(&one.apply(&b));
        let r2 = resid(&two.apply(&b));
        assert!(r2 < r1);
    }
}
