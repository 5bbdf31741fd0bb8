//! Small dense symmetric helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative singular-value cutoff used for every rank decision.
pub const RANK_CUTOFF: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues and eigenvectors of a symmetric matrix.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(m))
}

/// Threshold below which an eigenvalue of `m` counts as zero.
fn cutoff(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> f64 {
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    RANK_CUTOFF * top
}

/// Moore-Penrose inverse of a symmetric matrix and its numerical rank.
pub fn pinv_sym(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = m.nrows();
    let eig = sym_eigen(m);
    let tau = cutoff(&eig);
    let mut out = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > tau && lam != 0.0 {
            let u = eig.eigenvectors.column(j);
            out += (u * u.transpose()) / lam;
            rank += 1;
        }
    }
    (out, rank)
}

/// Orthonormal basis (columns) of the range of a symmetric PSD matrix.
pub fn range_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sym_eigen(m);
    let tau = cutoff(&eig);
    let cols: Vec<DVector<f64>> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &lam)| lam > tau && lam != 0.0)
        .map(|(j, _)| eig.eigenvectors.column(j).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(m.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let eig = sym_eigen(m);
    let tau = cutoff(&eig);
    eig.eigenvalues.iter().filter(|&&lam| lam.abs() > tau && lam != 0.0).count()
}

/// Inverse of a symmetric positive-definite matrix, `None` when it is not
/// numerically positive definite.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if !is_well_posed(m) {
        return None;
    }
    let chol = symmetrize(m).cholesky()?;
    Some(symmetrize(&chol.inverse()))
}

/// log det of a symmetric positive-definite matrix.
pub fn spd_logdet(m: &DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    if !is_well_posed(m) {
        return None;
    }
    let chol = symmetrize(m).cholesky()?;
    let l = chol.l_dirty();
    Some((0..m.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum())
}

/// Positive definite with smallest eigenvalue above the relative cutoff.
fn is_well_posed(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    if m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let eig = sym_eigen(m);
    let top = eig.eigenvalues.max();
    let low = eig.eigenvalues.min();
    top > 0.0 && low > RANK_CUTOFF * top
}

/// Orthonormal basis of the column span of `cols` (d×m), via SVD.
pub fn orthonormal_columns(cols: &DMatrix<f64>) -> DMatrix<f64> {
    let d = cols.nrows();
    if cols.ncols() == 0 {
        return DMatrix::zeros(d, 0);
    }
    let svd = cols.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let top = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
    let keep: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > RANK_CUTOFF * top && s > 0.0)
        .map(|(j, _)| {
            let mut c = u.column(j).into_owned();
            // fix the sign so the largest entry is positive
            let (imax, _) =
                c.iter().enumerate().fold(
                    (0, 0.0f64),
                    |(bi, bv), (i, &v)| {
                        if v.abs() > bv + 1e-14 {
                            (i, v.abs())
                        } else {
                            (bi, bv)
                        }
                    },
                );
            if c[imax] < 0.0 {
                c.neg_mut();
            }
            c
        })
        .collect();
    if keep.is_empty() {
        DMatrix::zeros(d, 0)
    } else {
        DMatrix::from_columns(&keep)
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pinv_of_rank_deficient_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let (p, r) = pinv_sym(&m);
        assert_eq!(r, 1);
        assert_relative_eq!(p[(0, 0)], 0.5, epsilon = 1e-15);
        assert_eq!(p[(1, 1)], 0.0);
    }

    #[test]
    fn pinv_of_zero_is_zero() {
        let (p, r) = pinv_sym(&DMatrix::zeros(3, 3));
        assert_eq!(r, 0);
        assert_eq!(max_abs(&p), 0.0);
    }

    #[test]
    fn logdet_matches_product_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 0.5]));
        assert_relative_eq!(spd_logdet(&m).unwrap(), 3.0f64.ln(), epsilon = 1e-14);
        assert!(spd_logdet(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).is_none());
    }

    #[test]
    fn collinear_columns_give_one_direction() {
        let cols = DMatrix::from_column_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let a = orthonormal_columns(&cols);
        assert_eq!(a.ncols(), 1);
        let s = 1.0 / 2f64.sqrt();
        assert_relative_eq!(a[(0, 0)], s, epsilon = 1e-12);
        assert_relative_eq!(a[(1, 0)], s, epsilon = 1e-12);
    }
}
