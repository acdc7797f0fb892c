//! Incomplete LU factorization with zero fill, stored on the sparsity
//! pattern of the input matrix (combined L\U storage, unit lower triangle
//! implicit).

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, LinearOperator};

#[derive(Debug, Clone)]
pub struct Ilu0Factors {
    factors: CsrMatrix,
    diag_pos: Vec<usize>,
}

/// IKJ-variant ILU(0): eliminate each row with the previous pivot rows,
/// discarding all fill outside the pattern of `a`. Requires an explicit
/// diagonal entry in every row.
pub fn ilu0_factor(a: &CsrMatrix) -> Result<Ilu0Factors> {
    assert_eq!(a.n_rows(), a.n_cols(), "ILU(0) needs a square matrix");
    let n = a.n_rows();
    let mut f = a.clone();
    let row_ptr = f.row_ptr().to_vec();
    let col_idx = f.col_idx().to_vec();

    let mut diag_pos = vec![usize::MAX; n];
    for r in 0..n {
        for k in row_ptr[r]..row_ptr[r + 1] {
            if col_idx[k] == r {
                diag_pos[r] = k;
            }
        }
        if diag_pos[r] == usize::MAX {
            return Err(Error::ZeroPivot { row: r, context: "ILU(0): missing diagonal" });
        }
    }

    let values = f.values_mut();
    for i in 1..n {
        let row_span = row_ptr[i]..row_ptr[i + 1];
        for kk in row_span.clone() {
            let k = col_idx[kk];
            if k >= i {
                break;
            }
            let pivot = values[diag_pos[k]];
            if pivot.abs() < 1e-300 {
                return Err(Error::ZeroPivot { row: k, context: "ILU(0)" });
            }
            let factor = values[kk] / pivot;
            values[kk] = factor;
            // subtract factor * (row k restricted to columns > k present in row i)
            let mut pk = diag_pos[k] + 1;
            let mut pi = kk + 1;
            while pk < row_ptr[k + 1] && pi < row_span.end {
                let ck = col_idx[pk];
                let ci = col_idx[pi];
                if ck == ci {
                    values[pi] -= factor * values[pk];
                    pk += 1;
                    pi += 1;
                } else if ck < ci {
                    pk += 1;
                } else {
                    pi += 1;
                }
            }
        }
        if values[diag_pos[i]].abs() < 1e-300 {
            return Err(Error::ZeroPivot { row: i, context: "ILU(0)" });
        }
    }
    Ok(Ilu0Factors { factors: f, diag_pos })
}

impl Ilu0Factors {
    /// Solve L U x = r.
    pub fn solve(&self, r: &[f64]) -> Vec<f64> {
        let n = self.factors.n_rows();
        assert_eq!(r.len(), n);
        let row_ptr = self.factors.row_ptr();
        let col_idx = self.factors.col_idx();
        let values = self.factors.values();

        let mut x = r.to_vec();
        // forward: unit lower triangle
        for i in 0..n {
            let mut acc = x[i];
            for k in row_ptr[i]..self.diag_pos[i] {
                acc -= values[k] * x[col_idx[k]];
            }
            x[i] = acc;
        }
        // backward: upper triangle with diagonal
        for i in (0..n).rev() {
            let mut acc = x[i];
            for k in self.diag_pos[i] + 1..row_ptr[i + 1] {
                acc -= values[k] * x[col_idx[k]];
            }
            x[i] = acc / values[self.diag_pos[i]];
        }
        x
    }

    /// Unit lower factor as an explicit matrix (tests and oracles).
    pub fn lower(&self) -> CsrMatrix {
        let n = self.factors.n_rows();
        let mut triplets = Vec::new();
        for r in 0..n {
            triplets.push((r, r, 1.0));
            for k in self.factors.row_ptr()[r]..self.diag_pos[r] {
                triplets.push((r, self.factors.col_idx()[k], self.factors.values()[k]));
            }
        }
        CsrMatrix::from_triplets(n, n, &triplets, false)
    }

    /// Upper factor including the diagonal.
    pub fn upper(&self) -> CsrMatrix {
        let n = self.factors.n_rows();
        let mut triplets = Vec::new();
        for r in 0..n {
            for k in self.diag_pos[r]..self.factors.row_ptr()[r + 1] {
                triplets.push((r, self.factors.col_idx()[k], self.factors.values()[k]));
            }
        }
        CsrMatrix::from_triplets(n, n, &triplets, false)
    }
}

impl LinearOperator for Ilu0Factors {
    fn dim(&self) -> usize {
        self.factors.n_rows()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let sol = self.solve(x);
        y.copy_from_slice(&sol);
    }
}
