//! Dense symmetric linear algebra: Cholesky, triangular solves, and a cyclic
//! Jacobi eigensolver. Everything here runs in 64-bit.

use crate::error::{Error, Result};
use crate::tensor::{Precision, SymmetricMatrix, Tensor};

/// Off-diagonal convergence threshold for the Jacobi sweeps, relative to
/// the Frobenius norm of the input.
const JACOBI_TOL: f64 = 1e-12;
/// Hard cap on Jacobi sweeps; symmetric input converges long before this.
const JACOBI_MAX_SWEEPS: usize = 100;

/// Factor S = L * L^T for symmetric positive definite S.
///
/// Returns the lower-triangular factor as a rank-2 tensor in double
/// precision. A non-positive pivot aborts with the offending index.
pub fn cholesky(s: &SymmetricMatrix) -> Result<Tensor> {
    let n = s.order();
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut acc = s.get(i, j);
            for k in 0..j {
                acc -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if acc <= 0.0 {
                    return Err(Error::NotPositiveDefinite { pivot: i, value: acc });
                }
                l[i * n + i] = acc.sqrt();
            } else {
                l[i * n + j] = acc / l[j * n + j];
            }
        }
    }
    Tensor::with_precision(vec![n, n], l, Precision::Double)
}

/// Solve L * X = B by forward substitution; L lower-triangular.
pub fn triangular_solve(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    solve_triangular(l, b, false)
}

/// Solve L^T * X = B by back substitution; L lower-triangular.
pub fn triangular_solve_transpose(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    solve_triangular(l, b, true)
}

fn solve_triangular(l: &Tensor, b: &Tensor, transpose: bool) -> Result<Tensor> {
    if l.rank() != 2 || l.shape()[0] != l.shape()[1] {
        return Err(Error::Shape(format!("triangular factor must be square, got {:?}", l.shape())));
    }
    let n = l.shape()[0];
    if b.rank() != 2 || b.shape()[0] != n {
        return Err(Error::Shape(format!(
            "rhs shape {:?} incompatible with factor order {n}",
            b.shape()
        )));
    }
    let cols = b.shape()[1];
    for i in 0..n {
        if l.at2(i, i) == 0.0 {
            return Err(Error::Singular { index: i });
        }
    }
    let mut x = vec![0.0f64; n * cols];
    let ld = l.data();
    let bd = b.data();
    if !transpose {
        for c in 0..cols {
            for i in 0..n {
                let mut acc = bd[i * cols + c];
                for k in 0..i {
                    acc -= ld[i * n + k] * x[k * cols + c];
                }
                x[i * cols + c] = acc / ld[i * n + i];
            }
        }
    } else {
        for c in 0..cols {
            for i in (0..n).rev() {
                let mut acc = bd[i * cols + c];
                for k in i + 1..n {
                    // (L^T)[i,k] = L[k,i]
                    acc -= ld[k * n + i] * x[k * cols + c];
                }
                x[i * cols + c] = acc / ld[i * n + i];
            }
        }
    }
    Tensor::with_precision(vec![n, cols], x, Precision::Double)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues sorted descending (ties broken by lowest index in the
/// pre-sort order) and the matching orthonormal eigenvectors as the columns
/// of a rank-2 tensor.
pub fn symmetric_eig(s: &SymmetricMatrix) -> Result<(Vec<f64>, Tensor)> {
    let n = s.order();
    let mut a = s.to_dense();
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm = s.frobenius();
    let tol = JACOBI_TOL * norm;

    if n > 1 {
        let mut converged = false;
        for sweep in 0..JACOBI_MAX_SWEEPS {
            let off = off_diag_norm(&a, n);
            if off <= tol {
                converged = true;
                break;
            }
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let apq = a[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    // Skip rotations that cannot move the off-diagonal norm.
                    if apq.abs() <= f64::EPSILON * norm * 1e-4 {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = if theta >= 0.0 {
                        1.0 / (theta + (1.0 + theta * theta).sqrt())
                    } else {
                        1.0 / (theta - (1.0 + theta * theta).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let sn = t * c;

                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - sn * akq;
                        a[k * n + q] = sn * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - sn * aqk;
                        a[q * n + k] = sn * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - sn * vkq;
                        v[k * n + q] = sn * vkp + c * vkq;
                    }
                }
            }
            let _ = sweep;
        }
        if !converged && off_diag_norm(&a, n) > tol {
            return Err(Error::Convergence {
                sweeps: JACOBI_MAX_SWEEPS,
                offdiag: off_diag_norm(&a, n),
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .partial_cmp(&a[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = vec![0.0f64; n * n];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vecs[row * n + col] = v[row * n + src];
        }
    }
    Ok((eigenvalues, Tensor::with_precision(vec![n, n], vecs, Precision::Double)?))
}

fn off_diag_norm(a: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..i {
            let x = a[i * n + j];
            acc += 2.0 * x * x;
        }
    }
    acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_identity() {
        let s = SymmetricMatrix::identity(3).unwrap();
        let l = cholesky(&s).unwrap();
        assert_eq!(l.data(), Tensor::identity(3).data());
    }

    #[test]
    fn cholesky_hand_case() {
        // [[4,2],[2,2]] -> [[2,0],[1,1]]
        let s = SymmetricMatrix::from_dense(2, &[4.0, 2.0, 2.0, 2.0]).unwrap();
        let l = cholesky(&s).unwrap();
        assert_eq!(l.data(), &[2.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        // det = -3: not positive definite.
        let s = SymmetricMatrix::from_dense(2, &[1.0, 2.0, 2.0, 1.0]).unwrap();
        match cholesky(&s) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn forward_substitution_hand_case() {
        // [[2,0],[1,1]] X = [[2],[2]] -> [[1],[1]]
        let l = Tensor::from_vec(vec![2, 2], vec![2.0, 0.0, 1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(vec![2, 1], vec![2.0, 2.0]).unwrap();
        let x = triangular_solve(&l, &b).unwrap();
        assert_eq!(x.data(), &[1.0, 1.0]);
    }

    #[test]
    fn identity_solve_is_passthrough() {
        let l = Tensor::identity(3);
        let b = Tensor::from_vec(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = triangular_solve(&l, &b).unwrap();
        assert_eq!(x.data(), b.data());
    }

    #[test]
    fn zero_diagonal_is_singular() {
        let l = Tensor::from_vec(vec![2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let b = Tensor::zeros(vec![2, 1]);
        assert!(matches!(triangular_solve(&l, &b), Err(Error::Singular { index: 0 })));
    }

    #[test]
    fn transpose_solve_matches_reconstruction() {
        let s = SymmetricMatrix::from_dense(2, &[4.0, 2.0, 2.0, 2.0]).unwrap();
        let l = cholesky(&s).unwrap();
        // L^T x = [1, 1] -> x found by back substitution; check L^T x == b.
        let b = Tensor::from_vec(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let x = triangular_solve_transpose(&l, &b).unwrap();
        let lt = Tensor::from_vec(vec![2, 2], vec![l.at2(0, 0), l.at2(1, 0), 0.0, l.at2(1, 1)]).unwrap();
        let back = crate::tensor::matmul(&lt, &x).unwrap();
        assert!(back.max_abs_diff(&b) < 1e-14);
    }

    #[test]
    fn eig_diagonal() {
        let s = SymmetricMatrix::from_dense(2, &[3.0, 0.0, 0.0, 1.0]).unwrap();
        let (vals, vecs) = symmetric_eig(&s).unwrap();
        assert_eq!(vals, vec![3.0, 1.0]);
        assert_eq!(vecs.data(), Tensor::identity(2).data());
    }

    #[test]
    fn eig_offdiagonal_hand_case() {
        // [[0,1],[1,0]] -> eigenvalues (1,-1), vectors (1,1)/sqrt2, (1,-1)/sqrt2.
        let s = SymmetricMatrix::from_dense(2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let (vals, vecs) = symmetric_eig(&s).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-14);
        assert!((vals[1] + 1.0).abs() < 1e-14);
        let r = 1.0 / 2.0f64.sqrt();
        // Columns up to sign.
        let c0 = [vecs.at2(0, 0), vecs.at2(1, 0)];
        let c1 = [vecs.at2(0, 1), vecs.at2(1, 1)];
        assert!((c0[0].abs() - r).abs() < 1e-12 && (c0[1].abs() - r).abs() < 1e-12);
        assert!((c0[0] - c0[1]).abs() < 1e-12, "first eigenvector is (1,1) direction");
        assert!((c1[0] + c1[1]).abs() < 1e-12, "second eigenvector is (1,-1) direction");
    }
}
