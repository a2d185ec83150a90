//! Small dense helpers shared by the divergence modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative threshold below which eigen/singular values count as roundoff.
pub const SPECTRUM_CLAMP: f64 = 1e-12;

pub(crate) fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Largest absolute asymmetry `max |m_ij - m_ji|`.
pub(crate) fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Zero every value whose magnitude is below `SPECTRUM_CLAMP` times the
/// largest one, along with any negative value (theory says nonnegative).
pub(crate) fn clamp_spectrum(values: &mut [f64]) {
    let top = values.iter().fold(0.0f64, |acc, v| acc.max(*v));
    let floor = SPECTRUM_CLAMP * top;
    for v in values.iter_mut() {
        if *v < floor {
            *v = 0.0;
        }
    }
}

/// Sum of singular values, with the relative clamp applied.
pub fn nuclear_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    if !all_finite(m) {
        return Err(Error::numeric("non-finite entries in nuclear norm input"));
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    clamp_spectrum(&mut sv);
    Ok(sv.iter().sum())
}

/// Eigenvalues of a symmetric matrix, clamped.
pub(crate) fn psd_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    clamp_spectrum(&mut ev);
    ev
}

/// Square-root factor `L` with `m = L Lᵀ` for a PSD matrix (eigen route, so
/// rank-deficient inputs are fine).
pub(crate) fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    clamp_spectrum(&mut vals);
    let mut factor = eig.eigenvectors;
    for (j, v) in vals.iter().enumerate() {
        let r = v.sqrt();
        factor.column_mut(j).scale_mut(r);
    }
    factor
}

/// Principal square root of a PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    clamp_spectrum(&mut vals);
    let roots = DVector::from_iterator(vals.len(), vals.iter().map(|v| v.sqrt()));
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&roots) * v.transpose()
}

/// Smallest and largest eigenvalue of a symmetric matrix (unclamped).
pub(crate) fn extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// `log |m|` for a matrix of arbitrary sign structure, via LU. Returns the
/// sign of the determinant alongside the log magnitude.
pub(crate) fn signed_log_det(m: &DMatrix<f64>) -> (f64, f64) {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut sign = if lu.p().determinant::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let mut log_abs = 0.0;
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        if d == 0.0 {
            return (0.0, f64::NEG_INFINITY);
        }
        if d < 0.0 {
            sign = -sign;
        }
        log_abs += d.abs().ln();
    }
    (sign, log_abs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nuclear_norm_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -2.0, 0.5]));
        assert!((nuclear_norm(&m).unwrap() - 5.5).abs() < 1e-12);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.7]);
        let r = psd_sqrt(&a);
        assert!((&r * &r - &a).abs().max() < 1e-12);
        let f = psd_factor(&a);
        assert!((&f * f.transpose() - &a).abs().max() < 1e-12);
    }

    #[test]
    fn signed_log_det_tracks_sign() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 3.0, 0.0]);
        let (s, l) = signed_log_det(&m);
        assert_eq!(s, -1.0);
        assert!((l - 6.0f64.ln()).abs() < 1e-12);
    }
}
