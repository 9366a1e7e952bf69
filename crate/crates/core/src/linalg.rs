//! Dense linear-algebra helpers shared by the solver and the MPC design code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eig_extremes(m).1
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eig_extremes(m).0
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Singular values in descending order (empty for an empty matrix).
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().cloned().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Operator 2-norm.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().cloned().unwrap_or(0.0)
}

/// Smallest singular value above `rel_tol * sigma_max`; `None` when the matrix is zero.
pub fn sigma_min_nonzero(m: &DMatrix<f64>, rel_tol: f64) -> Option<f64> {
    let s = singular_values(m);
    let top = *s.first()?;
    if top == 0.0 {
        return None;
    }
    s.into_iter().rev().find(|&v| v > rel_tol * top)
}

/// Numerical rank with the usual `max(r, c) * eps * sigma_max` cutoff.
pub fn rank(m: &DMatrix<f64>) -> usize {
    let s = singular_values(m);
    let Some(&top) = s.first() else { return 0 };
    let tol = (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * top;
    s.iter().filter(|&&v| v > tol).count()
}

/// Orthonormal basis of the null space of `m`, one basis vector per column.
pub fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if c == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad to square so the SVD returns a complete right singular basis.
    let k = r.max(c);
    let mut sq = DMatrix::zeros(k, c);
    sq.view_mut((0, 0), (r, c)).copy_from(m);
    let svd = sq.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let s = &svd.singular_values;
    let top = s.iter().cloned().fold(0.0, f64::max);
    let tol = (k as f64) * f64::EPSILON * top.max(f64::MIN_POSITIVE);
    let cols: Vec<DVector<f64>> = (0..s.len())
        .filter(|&i| s[i] <= tol)
        .map(|i| v_t.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(c, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let top = spectral_norm(m);
    let eps = (r.max(c) as f64) * f64::EPSILON * top;
    m.clone()
        .pseudo_inverse(eps)
        .expect("pseudo-inverse with nonnegative eps")
}

/// Solve `h x = rhs` for symmetric positive definite `h`.
pub fn spd_solve(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    match h.clone().cholesky() {
        Some(ch) => Ok(ch.solve(rhs)),
        None => Err(Error::Invariant("matrix is not positive definite".into())),
    }
}

/// Solve a general square system via LU; returns an error when singular.
pub fn lu_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Numeric { iter: 0 })
}

/// Matrix exponential `exp(a * t)`.
pub fn expm(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    (a * t).exp()
}

/// Exact zero-order-hold pair over a step `h`:
/// returns `(exp(a h), int_0^h exp(a s) ds * b)` using the block-exponential identity.
pub fn zoh(a: &DMatrix<f64>, b: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = b.ncols();
    let mut blk = DMatrix::zeros(n + m, n + m);
    blk.view_mut((0, 0), (n, n)).copy_from(a);
    blk.view_mut((0, n), (n, m)).copy_from(b);
    let e = expm(&blk, h);
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Golub-Welsch).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let b = kf / (4.0 * kf * kf - 1.0).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], 2.0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// Integral of `f` over `[a, b]` with an `n`-point Gauss-Legendre rule.
pub fn gauss_integrate<F: FnMut(f64) -> f64>(a: f64, b: f64, n: usize, mut f: F) -> f64 {
    let (x, w) = gauss_legendre(n);
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    x.iter().zip(&w).map(|(&xi, &wi)| wi * f(mid + half * xi)).sum::<f64>() * half
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // 5 points are exact up to degree 9.
        let v = gauss_integrate(0.0, 2.0, 5, |s| s.powi(9));
        assert!((v - 2f64.powi(10) / 10.0).abs() < 1e-10);
        let (_, w) = gauss_legendre(7);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn extremes_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5, 1.0]));
        let (lo, hi) = sym_eig_extremes(&m);
        assert!((lo - 0.5).abs() < 1e-14 && (hi - 2.0).abs() < 1e-14);
    }

    #[test]
    fn sigma_min_nonzero_skips_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]);
        assert_eq!(sigma_min_nonzero(&a, 1e-12), Some(3.0));
        assert_eq!(sigma_min_nonzero(&DMatrix::zeros(2, 2), 1e-12), None);
    }

    #[test]
    fn null_space_is_orthonormal_and_annihilated() {
        let m = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, -1.0, 0.0, 1.0, 1.0, 3.0]);
        let k = null_space(&m);
        assert_eq!(k.shape(), (4, 2));
        assert!((&m * &k).norm() < 1e-13);
        let gram = k.transpose() * &k;
        assert!((gram - DMatrix::identity(2, 2)).norm() < 1e-13);
    }

    #[test]
    fn zoh_of_integrator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let (ad, bd) = zoh(&a, &b, 0.5);
        assert!((ad[(0, 1)] - 0.5).abs() < 1e-14);
        assert!((bd[(0, 0)] - 0.125).abs() < 1e-14);
        assert!((bd[(1, 0)] - 0.5).abs() < 1e-14);
    }
}
