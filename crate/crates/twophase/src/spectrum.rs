//! Dense eigenvalue computation for the preconditioned-operator spectrum
//! study: Householder reduction to Hessenberg form followed by the Francis
//! double-shift QR iteration (the classic EISPACK `hqr` scheme, eigenvalues
//! only). A sampled subset of the returned eigenvalues is verified by
//! inverse iteration with a complex shift.

use num_complex::Complex64;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::sparse::LinearOperator;

pub const SPECTRUM_SIZE_CAP: usize = 2000;

/// All eigenvalues of a linear operator of dimension `n <= 2000`.
///
/// The operator is materialized densely by applying it to the canonical
/// basis vectors, mirroring how the spectra of J M^-1 composites are probed.
pub fn dense_spectrum(op: &dyn LinearOperator) -> Result<Vec<Complex64>> {
    let n = op.dim();
    if n > SPECTRUM_SIZE_CAP {
        return Err(Error::SpectrumSizeCap(n, SPECTRUM_SIZE_CAP));
    }
    let a = DenseMatrix::from_operator(op);
    dense_matrix_spectrum(&a)
}

pub fn dense_matrix_spectrum(a: &DenseMatrix) -> Result<Vec<Complex64>> {
    assert_eq!(a.n_rows(), a.n_cols());
    let n = a.n_rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut h = a.clone();
    balance(&mut h);
    hessenberg_reduce(&mut h);
    let eigs = hqr_eigenvalues(&mut h)?;
    verify_sampled_eigenvalues(a, &eigs)?;
    Ok(eigs)
}

/// Diagonal similarity scaling with powers of two so row and column norms
/// agree; eigenvalues are unchanged and the QR iteration becomes both
/// faster and more accurate on non-normal matrices.
fn balance(a: &mut DenseMatrix) {
    let n = a.n_rows();
    let radix = 2.0f64;
    let sqrdx = radix * radix;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let mut g = r / radix;
            let mut f = 1.0;
            let s = c + r;
            let mut c_acc = c;
            while c_acc < g {
                f *= radix;
                c_acc *= sqrdx;
            }
            g = r * radix;
            while c_acc > g {
                f /= radix;
                c_acc /= sqrdx;
            }
            if (c_acc + r) / f < 0.95 * s {
                done = false;
                let g = 1.0 / f;
                for j in 0..n {
                    a[(i, j)] *= g;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
            }
        }
    }
}

/// In-place Householder reduction to upper Hessenberg form.
fn hessenberg_reduce(a: &mut DenseMatrix) {
    let n = a.n_rows();
    for k in 0..n.saturating_sub(2) {
        // Householder vector annihilating column k below the subdiagonal
        let mut norm2 = 0.0;
        for i in k + 1..n {
            norm2 += a[(i, k)] * a[(i, k)];
        }
        let norm = norm2.sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[(k + 1, k)] >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n];
        v[k + 1] = a[(k + 1, k)] - alpha;
        for i in k + 2..n {
            v[i] = a[(i, k)];
        }
        let v_norm2: f64 = v[k + 1..].iter().map(|x| x * x).sum();
        if v_norm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / v_norm2;

        // left: A -= beta v (v^T A)
        for j in k..n {
            let mut dot = 0.0;
            for i in k + 1..n {
                dot += v[i] * a[(i, j)];
            }
            let f = beta * dot;
            for i in k + 1..n {
                a[(i, j)] -= f * v[i];
            }
        }
        // right: A -= beta (A v) v^T
        for i in 0..n {
            let mut dot = 0.0;
            for j in k + 1..n {
                dot += a[(i, j)] * v[j];
            }
            let f = beta * dot;
            for j in k + 1..n {
                a[(i, j)] -= f * v[j];
            }
        }
        a[(k + 1, k)] = alpha;
        for i in k + 2..n {
            a[(i, k)] = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix; destroys `h`.
fn hqr_eigenvalues(h: &mut DenseMatrix) -> Result<Vec<Complex64>> {
    let n = h.n_rows();
    let mut eig = vec![Complex64::new(0.0, 0.0); n];

    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += h[(i, j)].abs();
        }
    }
    if anorm == 0.0 {
        return Ok(eig);
    }

    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            // find l such that the subdiagonal entry (l, l-1) is negligible
            let mut l = nn;
            while l >= 1 {
                let s = h[(l as usize - 1, l as usize - 1)].abs()
                    + h[(l as usize, l as usize)].abs();
                let s = if s == 0.0 { anorm } else { s };
                if h[(l as usize, l as usize - 1)].abs() + s == s {
                    h[(l as usize, l as usize - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }

            let x = h[(nn as usize, nn as usize)];
            if l == nn {
                // single real eigenvalue
                eig[nn as usize] = Complex64::new(x + t, 0.0);
                nn -= 1;
                break;
            }
            let y = h[(nn as usize - 1, nn as usize - 1)];
            let w = h[(nn as usize, nn as usize - 1)] * h[(nn as usize - 1, nn as usize)];
            if l == nn - 1 {
                // 2x2 block: real pair or complex conjugate pair
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                let x = x + t;
                if q >= 0.0 {
                    let z = p + z.copysign(p);
                    eig[nn as usize - 1] = Complex64::new(x + z, 0.0);
                    eig[nn as usize] = if z != 0.0 {
                        Complex64::new(x - w / z, 0.0)
                    } else {
                        Complex64::new(x + z, 0.0)
                    };
                } else {
                    eig[nn as usize - 1] = Complex64::new(x + p, z);
                    eig[nn as usize] = Complex64::new(x + p, -z);
                }
                nn -= 2;
                break;
            }

            // no eigenvalue isolated yet: one double QR sweep
            if its == 50 {
                return Err(Error::QrNoConvergence(nn as usize));
            }
            let (mut x, mut y, mut w) = (x, y, w);
            if its % 10 == 0 && its > 0 {
                // exceptional shift
                t += x;
                for i in 0..=nn as usize {
                    h[(i, i)] -= x;
                }
                let s = h[(nn as usize, nn as usize - 1)].abs()
                    + h[(nn as usize - 1, nn as usize - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;

            // look for two consecutive small subdiagonal elements
            let mut m = nn - 2;
            let (mut p, mut q, mut r);
            loop {
                let mu = m as usize;
                let z = h[(mu, mu)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / h[(mu + 1, mu)] + h[(mu, mu + 1)];
                q = h[(mu + 1, mu + 1)] - z - rr - ss;
                r = h[(mu + 2, mu + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = h[(mu, mu - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs()
                    * (h[(mu - 1, mu - 1)].abs() + z.abs() + h[(mu + 1, mu + 1)].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nn {
                h[(i as usize, i as usize - 2)] = 0.0;
                if i != m + 2 {
                    h[(i as usize, i as usize - 3)] = 0.0;
                }
            }

            // double QR step on rows l..=nn and columns m..=nn
            for k in m..=(nn - 1) {
                let ku = k as usize;
                if k != m {
                    p = h[(ku, ku - 1)];
                    q = h[(ku + 1, ku - 1)];
                    r = if k != nn - 1 { h[(ku + 2, ku - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s == 0.0 {
                    continue;
                }
                if k == m {
                    if l != m {
                        h[(ku, ku - 1)] = -h[(ku, ku - 1)];
                    }
                } else {
                    h[(ku, ku - 1)] = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                // row modification
                for j in ku..=(nn as usize) {
                    let mut pp = h[(ku, j)] + q * h[(ku + 1, j)];
                    if k != nn - 1 {
                        pp += r * h[(ku + 2, j)];
                        h[(ku + 2, j)] -= pp * z;
                    }
                    h[(ku + 1, j)] -= pp * y;
                    h[(ku, j)] -= pp * x;
                }
                // column modification
                let mmin = if nn < k + 3 { nn as usize } else { ku + 3 };
                for i in (l as usize)..=mmin {
                    let mut pp = x * h[(i, ku)] + y * h[(i, ku + 1)];
                    if k != nn - 1 {
                        pp += z * h[(i, ku + 2)];
                        h[(i, ku + 2)] -= pp * r;
                    }
                    h[(i, ku + 1)] -= pp * q;
                    h[(i, ku)] -= pp;
                }
            }
        }
    }
    Ok(eig)
}

/// Verify a sample of the computed eigenvalues by inverse iteration with a
/// complex shift. The extremes of the spectrum are sampled (interior
/// eigenvalues of preconditioned operators sit in tight clusters where a
/// single-vector residual is meaningless); the Rayleigh quotient of the
/// inverse iterate must reproduce the sampled eigenvalue and its residual
/// must stay below 1e-8 times the Frobenius norm.
fn verify_sampled_eigenvalues(a: &DenseMatrix, eigs: &[Complex64]) -> Result<()> {
    let n = a.n_rows();
    if n < 2 {
        return Ok(());
    }
    let mut frob = 0.0;
    for i in 0..n {
        for j in 0..n {
            frob += a[(i, j)] * a[(i, j)];
        }
    }
    let scale = frob.sqrt().max(1e-300);
    let bound = 1e-8 * scale;
    // the two smallest and the largest eigenvalue by magnitude
    let mut order: Vec<usize> = (0..eigs.len()).collect();
    order.sort_by(|&i, &j| eigs[i].norm().partial_cmp(&eigs[j].norm()).unwrap());
    let picks = [order[0], order[1.min(order.len() - 1)], order[order.len() - 1]];

    for &idx in picks.iter().take(n.min(3)) {
        let lambda = eigs[idx];
        // shift slightly off the eigenvalue so A - shift I stays invertible
        let shift = lambda + Complex64::new(bound, bound);
        let mut shifted: Vec<Complex64> =
            (0..n * n).map(|k| Complex64::new(a[(k / n, k % n)], 0.0)).collect();
        for i in 0..n {
            shifted[i * n + i] -= shift;
        }
        let lu = match complex_lu(&mut shifted, n) {
            Some(lu) => lu,
            None => continue, // exactly singular shift: eigenvalue is exact
        };
        let mut v: Vec<Complex64> =
            (0..n).map(|i| Complex64::new(1.0 + (i as f64 * 0.37).sin(), 0.3)).collect();
        for _ in 0..4 {
            v = complex_lu_solve(&lu, n, &v);
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                break;
            }
            for z in v.iter_mut() {
                *z /= norm;
            }
        }
        // Rayleigh quotient and residual of the settled iterate
        let mut av = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..n {
                av[i] += a[(i, j)] * v[j];
            }
        }
        let rayleigh: Complex64 =
            v.iter().zip(&av).map(|(vi, avi)| vi.conj() * avi).sum();
        let mut resid = 0.0f64;
        for i in 0..n {
            resid += (av[i] - rayleigh * v[i]).norm_sqr();
        }
        let resid = resid.sqrt();
        if resid > bound || (rayleigh - lambda).norm() > 1e3 * bound {
            return Err(Error::EigenResidual { residual: resid.max((rayleigh - lambda).norm()), bound });
        }
    }
    Ok(())
}

struct ComplexLu {
    lu: Vec<Complex64>,
    piv: Vec<usize>,
}

fn complex_lu(a: &mut [Complex64], n: usize) -> Option<ComplexLu> {
    let mut piv: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut p = k;
        let mut max = a[k * n + k].norm();
        for r in k + 1..n {
            let v = a[r * n + k].norm();
            if v > max {
                max = v;
                p = r;
            }
        }
        if max < 1e-300 {
            return None;
        }
        if p != k {
            for c in 0..n {
                a.swap(k * n + c, p * n + c);
            }
            piv.swap(k, p);
        }
        let pivot = a[k * n + k];
        for r in k + 1..n {
            let factor = a[r * n + k] / pivot;
            a[r * n + k] = factor;
            for c in k + 1..n {
                let sub = factor * a[k * n + c];
                a[r * n + c] -= sub;
            }
        }
    }
    Some(ComplexLu { lu: a.to_vec(), piv })
}

fn complex_lu_solve(f: &ComplexLu, n: usize, b: &[Complex64]) -> Vec<Complex64> {
    let mut x: Vec<Complex64> = f.piv.iter().map(|&p| b[p]).collect();
    for r in 1..n {
        let mut acc = x[r];
        for c in 0..r {
            acc -= f.lu[r * n + c] * x[c];
        }
        x[r] = acc;
    }
    for r in (0..n).rev() {
        let mut acc = x[r];
        for c in r + 1..n {
            acc -= f.lu[r * n + c] * x[c];
        }
        x[r] = acc / f.lu[r * n + r];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CsrMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sorted_by_re_im(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
        v
    }

    #[test]
    fn diagonal_matrix_eigenvalues() {
        let triplets: Vec<_> = (0..5).map(|i| (i, i, (i + 1) as f64)).collect();
        let a = CsrMatrix::from_triplets(5, 5, &triplets, false);
        let eigs = sorted_by_re_im(dense_spectrum(&a).unwrap());
        for (i, e) in eigs.iter().enumerate() {
            assert!((e.re - (i + 1) as f64).abs() < 1e-10);
            assert!(e.im.abs() < 1e-10);
        }
    }

    #[test]
    fn rotation_matrix_gives_pure_imaginary_pair() {
        // 90 degree rotation: eigenvalues +-i
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, -1.0), (1, 0, 1.0)], true);
        let eigs = sorted_by_re_im(dense_spectrum(&a).unwrap());
        assert!(eigs[0].re.abs() < 1e-10 && (eigs[0].im + 1.0).abs() < 1e-10);
        assert!(eigs[1].re.abs() < 1e-10 && (eigs[1].im - 1.0).abs() < 1e-10);
    }

    #[test]
    fn companion_matrix_cube_roots_of_unity() {
        // companion of z^3 - 1
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 2, 1.0), (1, 0, 1.0), (2, 1, 1.0)],
            true,
        );
        let eigs = sorted_by_re_im(dense_spectrum(&a).unwrap());
        let mut expected = vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(-0.5, 3f64.sqrt() / 2.0),
            Complex64::new(-0.5, -3f64.sqrt() / 2.0),
        ];
        expected.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
        for (e, x) in eigs.iter().zip(&expected) {
            assert!((e - x).norm() < 1e-10, "{e} vs {x}");
        }
    }

    #[test]
    fn known_spectrum_under_orthogonal_similarity() {
        // A = Q D Q^T with known D and a random orthogonal Q
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 24;
        let d: Vec<f64> = (0..n).map(|i| (i as f64) * 0.5 - 3.0).collect();
        // orthogonal Q from Gram-Schmidt on a random matrix
        let mut q = vec![vec![0.0f64; n]; n];
        for col in 0..n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            for prev in 0..col {
                let dot: f64 = (0..n).map(|i| q[i][prev] * v[i]).sum();
                for i in 0..n {
                    v[i] -= dot * q[i][prev];
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for i in 0..n {
                q[i][col] = v[i] / norm;
            }
        }
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += q[i][k] * d[k] * q[j][k];
                }
                a[(i, j)] = acc;
            }
        }
        let mut eigs: Vec<f64> =
            dense_matrix_spectrum(&a).unwrap().iter().map(|e| e.re).collect();
        eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (e, expect) in eigs.iter().zip(&d) {
            assert!((e - expect).abs() < 1e-8, "{e} vs {expect}");
        }
    }

    #[test]
    fn trace_and_size_consistency_on_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 30;
        let mut a = DenseMatrix::zeros(n, n);
        let mut trace = 0.0;
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = rng.random::<f64>() - 0.5;
            }
            trace += a[(i, i)];
        }
        let eigs = dense_matrix_spectrum(&a).unwrap();
        assert_eq!(eigs.len(), n);
        let sum: Complex64 = eigs.iter().sum();
        assert!((sum.re - trace).abs() < 1e-8);
        assert!(sum.im.abs() < 1e-8);
    }

    #[test]
    fn size_cap_enforced() {
        struct Big;
        impl LinearOperator for Big {
            fn dim(&self) -> usize {
                4000
            }
            fn apply_into(&self, _x: &[f64], _y: &mut [f64]) {
                unreachable!()
            }
        }
        assert!(matches!(dense_spectrum(&Big), Err(Error::SpectrumSizeCap(4000, _))));
    }
}
