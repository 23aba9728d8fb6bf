//! Small dense routines on row-major square matrices.

use crate::scalar::Real;

/// Lower Cholesky factor of a symmetric positive definite `n×n` matrix, or
/// `None` when a pivot is not strictly positive.
pub fn cholesky<T: Real>(a: &[T], n: usize) -> Option<Vec<T>> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `L x = b` in place for lower-triangular `L`.
pub fn forward_solve<T: Real>(l: &[T], n: usize, b: &mut [T]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `Lᵀ x = b` in place for lower-triangular `L`.
pub fn backward_solve_transposed<T: Real>(l: &[T], n: usize, b: &mut [T]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Inverse of a symmetric positive definite matrix from its Cholesky factor.
pub fn inverse_from_cholesky<T: Real>(l: &[T], n: usize) -> Vec<T> {
    let mut inv = vec![T::zero(); n * n];
    let mut col = vec![T::zero(); n];
    for j in 0..n {
        col.iter_mut().for_each(|c| *c = T::zero());
        col[j] = T::one();
        forward_solve(l, n, &mut col);
        backward_solve_transposed(l, n, &mut col);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    // symmetrize away rounding asymmetry
    for i in 0..n {
        for j in 0..i {
            let m = (inv[i * n + j] + inv[j * n + i]) * T::lit(0.5);
            inv[i * n + j] = m;
            inv[j * n + i] = m;
        }
    }
    inv
}

/// `L v` for lower-triangular `L`.
pub fn lower_mul<T: Real>(l: &[T], n: usize, v: &[T]) -> Vec<T> {
    (0..n).map(|i| (0..=i).map(|k| l[i * n + k] * v[k]).sum()).collect()
}
