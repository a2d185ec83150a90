//! Closed-form divergences between Gaussians in the native space.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::SampleSet;
use crate::linalg;

/// Mean vector and covariance matrix of a Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    /// Checks shapes, finiteness, symmetry (1e-12 absolute) and PSD-ness up to
    /// roundoff (smallest eigenvalue ≥ −1e-8 × largest).
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::DimensionMismatch(cov.nrows(), d));
        }
        if mean.iter().any(|v| !v.is_finite()) || !linalg::all_finite(&cov) {
            return Err(Error::input("moments contain non-finite values"));
        }
        if linalg::asymmetry(&cov) > 1e-12 {
            return Err(Error::input("covariance is not symmetric"));
        }
        let (lo, hi) = linalg::extreme_eigenvalues(&cov);
        if lo < -1e-8 * hi.max(0.0) {
            return Err(Error::numeric(format!("covariance is not PSD (smallest eigenvalue {lo:e})")));
        }
        Ok(GaussianMoments { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and biased (1/n) covariance.
pub fn moments(x: &SampleSet) -> GaussianMoments {
    let n = x.len() as f64;
    let d = x.dim();
    let mut mean = DVector::zeros(d);
    for s in x.samples() {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for s in x.samples() {
        for a in 0..d {
            let da = s[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (s[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / n;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    GaussianMoments { mean, cov }
}

/// `tr((C2 C1)^{1/2})` through the symmetric matrix `L2ᵀ C1 L2`, where
/// `C2 = L2 L2ᵀ`. Both products share their spectrum, and the symmetric one
/// is well conditioned.
pub fn trace_sqrt_product(c1: &DMatrix<f64>, c2: &DMatrix<f64>) -> Result<f64> {
    if c1.shape() != c2.shape() || !c1.is_square() {
        return Err(Error::DimensionMismatch(c1.nrows(), c2.nrows()));
    }
    let l2 = linalg::psd_factor(c2);
    let inner = l2.transpose() * c1 * &l2;
    Ok(linalg::psd_eigenvalues(&inner).iter().map(|v| v.sqrt()).sum())
}

/// `tr((C1^{1/2} C2 C1^{1/2})^{1/2})`, the form that appears in W₂.
pub fn trace_sqrt_sandwich(c1: &DMatrix<f64>, c2: &DMatrix<f64>) -> Result<f64> {
    if c1.shape() != c2.shape() || !c1.is_square() {
        return Err(Error::DimensionMismatch(c1.nrows(), c2.nrows()));
    }
    let r1 = linalg::psd_sqrt(c1);
    let inner = &r1 * c2 * &r1;
    Ok(linalg::psd_eigenvalues(&inner).iter().map(|v| v.sqrt()).sum())
}

/// Squared L²-Wasserstein distance between two Gaussians:
/// `‖m1 − m2‖² + tr(C1) + tr(C2) − 2 tr((C2 C1)^{1/2})`.
pub fn w2_gaussian_sq(a: &GaussianMoments, b: &GaussianMoments) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let (t1, t2) = (a.cov.trace(), b.cov.trace());
    let cross = trace_sqrt_product(&a.cov, &b.cov)?;
    let value = mean_term + t1 + t2 - 2.0 * cross;
    let scale = mean_term + t1.abs() + t2.abs();
    clamp_nonnegative(value, 1e-8 * scale.max(1.0), "squared W2")
}

/// Clamps roundoff negatives to zero; anything below `-tol` is an error.
pub(crate) fn clamp_nonnegative(value: f64, tol: f64, what: &str) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::numeric(format!("{what} is not finite")));
    }
    if value >= 0.0 {
        Ok(value)
    } else if value >= -tol {
        Ok(0.0)
    } else {
        Err(Error::numeric(format!("{what} is negative beyond roundoff: {value:e}")))
    }
}

fn cholesky_of(cov: &DMatrix<f64>, which: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let (lo, hi) = linalg::extreme_eigenvalues(cov);
    if !(lo > 0.0 && lo > linalg::SPECTRUM_CLAMP * hi) {
        return Err(Error::numeric(format!(
            "{which} covariance is singular (smallest eigenvalue {lo:e}); regularize it first"
        )));
    }
    linalg::symmetrize(cov)
        .cholesky()
        .ok_or_else(|| Error::numeric(format!("{which} covariance is not positive definite")))
}

/// KL(N1 ‖ N2) = ½{(m1−m2)ᵀC2⁻¹(m1−m2) + log(|C2|/|C1|) + tr(C1 C2⁻¹) − d}.
///
/// Both covariances must be strictly positive definite; singular inputs are
/// refused, not regularized.
pub fn kl_gaussian(a: &GaussianMoments, b: &GaussianMoments) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let ch1 = cholesky_of(&a.cov, "first argument's")?;
    let ch2 = cholesky_of(&b.cov, "second argument's")?;
    let log_det = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| {
        2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    };
    let diff = &a.mean - &b.mean;
    let quad = diff.dot(&ch2.solve(&diff));
    let trace = ch2.solve(&a.cov).trace();
    let d = a.dim() as f64;
    let value = 0.5 * (quad + log_det(&ch2) - log_det(&ch1) + trace - d);
    clamp_nonnegative(value, 1e-10 * (1.0 + quad.abs() + trace.abs()), "Gaussian KL")
}

/// True when every eigenvalue clears the relative roundoff floor.
pub(crate) fn strictly_pd(cov: &DMatrix<f64>) -> bool {
    let (lo, hi) = linalg::extreme_eigenvalues(cov);
    lo > 0.0 && lo > linalg::SPECTRUM_CLAMP * hi
}
