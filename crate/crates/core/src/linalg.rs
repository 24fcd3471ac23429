//! Small complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;

/// Relative singular-value cutoff used by every least-squares solve.
pub const PINV_RCOND: f64 = 1e-10;

/// Moore–Penrose pseudo-inverse; singular values below `rcond * σ_max` are
/// treated as zero. Returns the inverse and the numerical rank.
pub fn pinv(a: &DMatrix<C64>, rcond: f64) -> (DMatrix<C64>, usize) {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return (DMatrix::zeros(cols, rows), 0);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let s = &svd.singular_values;
    let s_max = s.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rcond * s_max;
    let mut out = DMatrix::<C64>::zeros(cols, rows);
    let mut rank = 0;
    for (i, &sv) in s.iter().enumerate() {
        if sv <= cutoff || sv == 0.0 {
            continue;
        }
        rank += 1;
        let inv = 1.0 / sv;
        // out += v_i * inv * u_i^H
        for c in 0..rows {
            let uc = u[(c, i)].conj() * inv;
            for r in 0..cols {
                out[(r, c)] += v_t[(i, r)].conj() * uc;
            }
        }
    }
    (out, rank)
}

/// Squared Frobenius norm.
pub fn fro2(a: &DMatrix<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub fn norm2_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Eigendecomposition of a Hermitian matrix (only the lower triangle is read).
/// Eigenvalues are real; columns of the returned matrix are orthonormal eigenvectors.
pub fn hermitian_eigen(a: &DMatrix<C64>) -> (DVector<f64>, DMatrix<C64>) {
    let eig = SymmetricEigen::new(a.clone());
    (eig.eigenvalues, eig.eigenvectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn pinv_of_tall_matrix_is_left_inverse() {
        let a = DMatrix::from_row_slice(
            3,
            2,
            &[c(1.0, 0.5), c(0.0, 1.0), c(2.0, 0.0), c(1.0, -1.0), c(0.3, 0.2), c(-1.0, 0.0)],
        );
        let (p, rank) = pinv(&a, PINV_RCOND);
        assert_eq!(rank, 2);
        let id = &p * &a;
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(id[(i, j)].re, want, epsilon = 1e-12);
                assert_relative_eq!(id[(i, j)].im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pinv_truncates_rank_deficient_columns() {
        // second column is a multiple of the first
        let a = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(1.0, 1.0), c(2.0, 2.0)]);
        let (p, rank) = pinv(&a, PINV_RCOND);
        assert_eq!(rank, 1);
        // Penrose condition a p a = a
        let apa = &a * &p * &a;
        for (x, y) in apa.iter().zip(a.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn hermitian_eigen_reconstructs() {
        let a = DMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(3.0, 0.0)]);
        let (vals, vecs) = hermitian_eigen(&a);
        let d = DMatrix::from_diagonal(&vals.map(|x| c(x, 0.0)));
        let back = &vecs * d * vecs.adjoint();
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }
}
