//! Small dense linear algebra on row-major slices.
//!
//! Only what the discretization and the proximal maps need: tiny symmetric
//! eigenproblems (Gram matrices of Jacobian blocks) and a dense Cholesky
//! factorization for the stencil Laplacian.

use crate::error::{Error, Result};
use crate::real::Real;

/// `c = a * b` with `a` of shape `n x k` and `b` of shape `k x m`.
pub fn matmul<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    let mut c = vec![T::zero(); n * m];
    for i in 0..n {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            for j in 0..m {
                c[i * m + j] += aip * b[p * m + j];
            }
        }
    }
    c
}

pub fn transpose<T: Real>(a: &[T], n: usize, m: usize) -> Vec<T> {
    let mut t = vec![T::zero(); n * m];
    for i in 0..n {
        for j in 0..m {
            t[j * n + i] = a[i * m + j];
        }
    }
    t
}

/// Eigendecomposition of the symmetric 2x2 matrix `[[a, b], [b, c]]`.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as `(cos θ, sin θ)` and `(-sin θ, cos θ)`.
#[derive(Debug, Clone, Copy)]
pub struct SymEigen2<T> {
    pub values: [T; 2],
    pub vectors: [[T; 2]; 2],
}

pub fn sym_eigen2<T: Real>(a: T, b: T, c: T) -> SymEigen2<T> {
    let two = T::lit(2.0);
    let half_diff = (a - c) / two;
    let mean = (a + c) / two;
    let radius = half_diff.hypot(b);
    let theta = b.atan2(half_diff) / two;
    let (s, co) = theta.sin_cos();
    SymEigen2 {
        values: [mean + radius, mean - radius],
        vectors: [[co, s], [-s, co]],
    }
}

/// Largest eigenvalue of `[[a, b], [b, c]]` without forming eigenvectors.
#[inline]
pub fn sym_max_eigenvalue2<T: Real>(a: T, b: T, c: T) -> T {
    let two = T::lit(2.0);
    (a + c) / two + ((a - c) / two).hypot(b)
}

/// Cyclic Jacobi eigenvalue iteration for a small symmetric `n x n` matrix.
///
/// Returns `(values, vectors)` with values sorted descending and
/// `vectors[i * n + k]` the `i`-th component of the `k`-th eigenvector.
pub fn jacobi_eigen<T: Real>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let scale = m.iter().fold(T::zero(), |acc, x| acc + *x * *x).sqrt();
    let tiny = T::epsilon() * T::epsilon() * scale * scale;
    for _sweep in 0..64 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off <= tiny {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) / (T::lit(2.0) * apq);
                let t = tau.signum() / (tau.abs() + (T::one() + tau * tau).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[y * n + y].partial_cmp(&m[x * n + x]).unwrap());
    let values = order.iter().map(|&k| m[k * n + k]).collect();
    let mut vectors = vec![T::zero(); n * n];
    for (col, &k) in order.iter().enumerate() {
        for i in 0..n {
            vectors[i * n + col] = v[i * n + k];
        }
    }
    (values, vectors)
}

/// Dense Cholesky factor `a = L Lᵀ` of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    lower: Vec<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn factor(a: &[T], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::shape(format!("{n}x{n}"), a.len()));
        }
        let mut l = vec![T::zero(); n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > T::zero()) {
                return Err(Error::Singular(format!(
                    "matrix is not positive definite (pivot {j})"
                )));
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Self { n, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `a x = rhs` in place.
    pub fn solve_in_place(&self, x: &mut [T]) {
        let n = self.n;
        let l = &self.lower;
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[i * n + k] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
    }
}

/// Inverse of a small symmetric positive definite matrix.
pub fn inverse_spd<T: Real>(a: &[T], n: usize) -> Result<Vec<T>> {
    let chol = Cholesky::factor(a, n)?;
    let mut inv = vec![T::zero(); n * n];
    let mut col = vec![T::zero(); n];
    for j in 0..n {
        col.iter_mut().for_each(|c| *c = T::zero());
        col[j] = T::one();
        chol.solve_in_place(&mut col);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    Ok(inv)
}

/// Smallest eigenvalue of a small symmetric matrix.
pub fn min_eigenvalue<T: Real>(a: &[T], n: usize) -> T {
    match n {
        0 => T::infinity(),
        1 => a[0],
        2 => sym_eigen2(a[0], a[1], a[3]).values[1],
        _ => *jacobi_eigen(a, n).0.last().unwrap(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen2_reconstructs() {
        let (a, b, c) = (2.0_f64, -0.7, 0.5);
        let e = sym_eigen2(a, b, c);
        for (k, lam) in e.values.iter().enumerate() {
            let [x, y] = e.vectors[k];
            assert!((a * x + b * y - lam * x).abs() < 1e-14);
            assert!((b * x + c * y - lam * y).abs() < 1e-14);
        }
        assert!(e.values[0] >= e.values[1]);
        assert!((sym_max_eigenvalue2(a, b, c) - e.values[0]).abs() < 1e-14);
    }

    #[test]
    fn jacobi_matches_eigen2_and_reconstructs() {
        let a = [4.0_f64, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 1.0];
        let (vals, vecs) = jacobi_eigen(&a, 3);
        for k in 0..3 {
            for i in 0..3 {
                let av: f64 = (0..3).map(|j| a[i * 3 + j] * vecs[j * 3 + k]).sum();
                assert!((av - vals[k] * vecs[i * 3 + k]).abs() < 1e-12);
            }
        }
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
    }

    #[test]
    fn cholesky_solves_and_rejects_indefinite() {
        let a = [4.0_f64, 2.0, 2.0, 3.0];
        let chol = Cholesky::factor(&a, 2).unwrap();
        let mut x = [2.0, 1.0];
        chol.solve_in_place(&mut x);
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-14);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-14);
        assert!(Cholesky::factor(&[1.0_f64, 2.0, 2.0, 1.0], 2).is_err());
        let inv = inverse_spd(&a, 2).unwrap();
        let id = matmul(&a, &inv, 2, 2, 2);
        assert!((id[0] - 1.0).abs() < 1e-14 && id[1].abs() < 1e-14);
    }
}
