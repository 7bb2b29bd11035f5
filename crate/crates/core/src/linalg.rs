//! Small dense helpers on top of nalgebra: SVD-thresholded ranks, ranges,
//! kernels and pseudo-inverses, plus the symmetric utilities the Riccati
//! schemes need.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Ratio σ_min/σ_max below which a square coefficient is treated as singular.
pub const INVERTIBILITY_TOL: f64 = 1e-10;

/// Thin SVD M = U diag(s) Vᵀ, computed with faer. nalgebra's implicit-shift
/// iteration can return inaccurate factors on rank-deficient inputs, which the
/// rank and range decisions here are built on.
fn thin_svd(m: &Mat) -> (Mat, Vector, Mat) {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return (Mat::zeros(r, 0), Vector::zeros(0), Mat::zeros(0, c));
    }
    let f = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    match f.thin_svd() {
        Ok(svd) => {
            let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
            (
                Mat::from_fn(r, k, |i, j| u[(i, j)]),
                Vector::from_fn(k, |i, _| s[i]),
                Mat::from_fn(k, c, |i, j| v[(j, i)]),
            )
        }
        Err(_) => {
            let svd = m.clone().svd(true, true);
            (svd.u.expect("u requested"), svd.singular_values, svd.v_t.expect("v_t requested"))
        }
    }
}

pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = thin_svd(m).1.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Largest singular value (0 for empty matrices).
pub fn spectral_norm(m: &Mat) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Number of singular values strictly above `tol * scale`.
pub fn rank_with_scale(m: &Mat, tol: f64, scale: f64) -> usize {
    if scale <= 0.0 {
        return 0;
    }
    singular_values(m).iter().filter(|&&s| s > tol * scale).count()
}

/// Numerical rank relative to the largest singular value.
pub fn rank(m: &Mat, tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&x| x > tol * smax).count(),
        _ => 0,
    }
}

/// Orthonormal basis of the column space (singular values above `tol·σ_max`).
pub fn range_basis(m: &Mat, tol: f64) -> Mat {
    range_basis_with_scale(m, tol, spectral_norm(m))
}

/// Orthonormal basis of the column space, keeping singular values above `tol·scale`.
pub fn range_basis_with_scale(m: &Mat, tol: f64, scale: f64) -> Mat {
    let rows = m.nrows();
    if m.is_empty() || scale <= 0.0 {
        return Mat::zeros(rows, 0);
    }
    let (u, s, _) = thin_svd(m);
    let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > tol * scale).collect();
    select_columns(&u, &keep)
}

/// Orthonormal basis of the orthogonal complement of span(`basis`) in R^ambient.
/// `basis` must have orthonormal columns.
pub fn complement(basis: &Mat, ambient: usize) -> Mat {
    if basis.ncols() == 0 {
        return Mat::identity(ambient, ambient);
    }
    if ambient == 0 {
        return Mat::zeros(0, 0);
    }
    let proj = Mat::identity(ambient, ambient) - basis * basis.transpose();
    let (u, s, _) = thin_svd(&proj);
    let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > 0.5).collect();
    select_columns(&u, &keep)
}

/// Orthonormal basis of ker(m).
pub fn null_space(m: &Mat, tol: f64) -> Mat {
    null_space_with_scale(m, tol, spectral_norm(m))
}

/// Orthonormal basis of ker(m), treating singular values up to `tol·scale` as zero.
pub fn null_space_with_scale(m: &Mat, tol: f64, scale: f64) -> Mat {
    let row_space = range_basis_with_scale(&m.transpose(), tol, scale);
    complement(&row_space, m.ncols())
}

/// Moore–Penrose pseudo-inverse with relative truncation.
pub fn pinv(m: &Mat, tol: f64) -> Mat {
    if m.is_empty() {
        return Mat::zeros(m.ncols(), m.nrows());
    }
    let (u, s, vt) = thin_svd(m);
    let smax = s.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut out = Mat::zeros(m.ncols(), m.nrows());
    if smax == 0.0 {
        return out;
    }
    for i in 0..s.len() {
        if s[i] > tol * smax {
            out += vt.row(i).transpose() * u.column(i).transpose() * (1.0 / s[i]);
        }
    }
    out
}

pub fn select_columns(m: &Mat, cols: &[usize]) -> Mat {
    let mut out = Mat::zeros(m.nrows(), cols.len());
    for (k, &c) in cols.iter().enumerate() {
        out.set_column(k, &m.column(c));
    }
    out
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &Mat) -> f64 {
    (m - m.transpose()).amax()
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn lambda_min(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Inverse of a square matrix, or `None` when σ_min/σ_max < [`INVERTIBILITY_TOL`].
pub fn checked_inverse(a: &Mat) -> Option<Mat> {
    if a.nrows() != a.ncols() {
        return None;
    }
    if a.is_empty() {
        return Some(Mat::zeros(0, 0));
    }
    let s = singular_values(a);
    let smax = s[0];
    let smin = *s.last().unwrap();
    if smax == 0.0 || smin / smax < INVERTIBILITY_TOL {
        return None;
    }
    a.clone().try_inverse()
}

/// Solves `eta · X = rhs` for symmetric `eta ⪰ eps·I`.
///
/// Cholesky first; when rounding makes the factorization fail, falls back to
/// a symmetric eigendecomposition with eigenvalues clamped below at `eps`.
pub fn spd_solve(eta: &Mat, rhs: &Mat, eps: f64) -> Result<Mat> {
    let sym = symmetrize(eta);
    if let Some(chol) = sym.clone().cholesky() {
        let x = chol.solve(rhs);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let eig = SymmetricEigen::new(sym);
    let mut inv_diag = eig.eigenvalues.clone();
    for v in inv_diag.iter_mut() {
        let clamped = v.max(eps);
        if clamped <= 0.0 || !clamped.is_finite() {
            return Err(Error::Numerical("eta is singular".into()));
        }
        *v = 1.0 / clamped;
    }
    let q = &eig.eigenvectors;
    let x = q * Mat::from_diagonal(&inv_diag) * q.transpose() * rhs;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Numerical("eta solve produced non-finite values".into()))
    }
}

/// Horizontal concatenation.
pub fn hstack(blocks: &[Mat]) -> Mat {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Vertical concatenation.
pub fn vstack(blocks: &[Mat]) -> Mat {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Row-major flattening, the serialization order used in reports.
pub fn to_row_major(m: &Mat) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_wide_matrix() {
        let m = Mat::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let k = null_space(&m, 1e-12);
        assert_eq!(k.ncols(), 2);
        assert!((&m * &k).amax() < 1e-12);
        assert!((k.transpose() * &k - Mat::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn rank_of_zero_is_zero() {
        assert_eq!(rank(&Mat::zeros(2, 3), 1e-8), 0);
        assert_eq!(range_basis(&Mat::zeros(2, 3), 1e-8).ncols(), 0);
    }

    #[test]
    fn pinv_solves_consistent_system() {
        let a = Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let x = Vector::from_vec(vec![2.0, -1.0]);
        let b = &a * &x;
        let sol = pinv(&a, 1e-12) * b;
        assert!((sol - x).amax() < 1e-12);
    }

    #[test]
    fn singular_inverse_is_rejected() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(checked_inverse(&a).is_none());
        assert!(checked_inverse(&Mat::identity(2, 2)).is_some());
    }

    #[test]
    fn spd_solve_matches_inverse() {
        let eta = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let rhs = Mat::identity(2, 2);
        let x = spd_solve(&eta, &rhs, 1e-12).unwrap();
        assert!((&eta * x - rhs).amax() < 1e-12);
    }
}
