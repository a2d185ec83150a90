//! Reference computations in an explicit, finite-dimensional feature space.
//!
//! For the linear kernel and the degree-2 polynomial kernel the feature map
//! `φ` is known in closed form, so means, covariances and the regularized
//! covariance `H = Σ + ρI` can be built directly. These routines evaluate the
//! Gaussian formulas on those explicit objects and serve as independent
//! checks for the kernel-trick implementations.

use nalgebra::{DMatrix, DVector};

use crate::kernel::{Kernel, SampleSet};
use crate::linalg;

/// A kernel whose feature map is available explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExplicitFeatureMap {
    /// `φ(x) = x`.
    Linear { d: usize },
    /// Monomial embedding of `(xᵀy + c)²`:
    /// `[x_i², √2·x_i·x_j (i<j), √(2c)·x_i, c]`.
    Poly2 { d: usize, offset: f64 },
}

impl ExplicitFeatureMap {
    pub fn kernel(&self) -> Kernel {
        match *self {
            ExplicitFeatureMap::Linear { .. } => Kernel::Linear,
            ExplicitFeatureMap::Poly2 { offset, .. } => Kernel::Polynomial { degree: 2, offset },
        }
    }

    /// Feature dimension `l`.
    pub fn dim(&self) -> usize {
        match *self {
            ExplicitFeatureMap::Linear { d } => d,
            ExplicitFeatureMap::Poly2 { d, .. } => d + d * (d - 1) / 2 + d + 1,
        }
    }

    pub fn map(&self, x: &[f64]) -> DVector<f64> {
        match *self {
            ExplicitFeatureMap::Linear { .. } => DVector::from_column_slice(x),
            ExplicitFeatureMap::Poly2 { d, offset } => {
                let mut out = Vec::with_capacity(self.dim());
                out.extend(x.iter().map(|v| v * v));
                for i in 0..d {
                    for j in (i + 1)..d {
                        out.push(std::f64::consts::SQRT_2 * x[i] * x[j]);
                    }
                }
                let lin = (2.0 * offset).sqrt();
                out.extend(x.iter().map(|v| lin * v));
                out.push(offset);
                DVector::from_vec(out)
            }
        }
    }

    /// `Φ`, the `l × n` matrix whose columns are the mapped samples.
    pub fn feature_matrix(&self, x: &SampleSet) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = x.samples().map(|s| self.map(s)).collect();
        DMatrix::from_columns(&cols)
    }

    /// Mean and (1/n) covariance of the mapped samples.
    pub fn moments(&self, x: &SampleSet) -> (DVector<f64>, DMatrix<f64>) {
        let phi = self.feature_matrix(x);
        let n = x.len() as f64;
        let mean = phi.column_mean();
        let mut cov = DMatrix::zeros(self.dim(), self.dim());
        for c in phi.column_iter() {
            let dv = c - &mean;
            cov += &dv * dv.transpose();
        }
        (mean, cov / n)
    }

    /// Squared W₂ between the feature-space Gaussians, using
    /// `tr(Σ1^{1/2} Σ2 Σ1^{1/2})^{1/2}` for the cross term.
    pub fn w2_sq(&self, x: &SampleSet, y: &SampleSet) -> f64 {
        let (m1, c1) = self.moments(x);
        let (m2, c2) = self.moments(y);
        let r1 = linalg::psd_sqrt(&c1);
        let inner = &r1 * &c2 * &r1;
        let cross: f64 = linalg::psd_eigenvalues(&inner).iter().map(|v| v.sqrt()).sum();
        (m1 - m2).norm_squared() + c1.trace() + c2.trace() - 2.0 * cross
    }

    /// KL(N(μ1, H1) ‖ N(μ2, H2)) with `Hᵢ = Σᵢ + ρI`, evaluated densely.
    pub fn kl(&self, x: &SampleSet, y: &SampleSet, rho: f64) -> f64 {
        let l = self.dim();
        let (m1, c1) = self.moments(x);
        let (m2, c2) = self.moments(y);
        let h1 = c1 + DMatrix::identity(l, l) * rho;
        let h2 = c2 + DMatrix::identity(l, l) * rho;
        let ch1 = h1.clone().cholesky().expect("H1 is positive definite");
        let ch2 = h2.clone().cholesky().expect("H2 is positive definite");
        let log_det = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| {
            2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
        };
        let diff = m1 - m2;
        let quad = diff.dot(&ch2.solve(&diff));
        let trace = ch2.solve(&h1).trace();
        0.5 * (quad + log_det(&ch2) - log_det(&ch1) + trace - l as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::kernel_eval;
    use rand::{Rng, SeedableRng};

    #[test]
    fn feature_maps_reproduce_their_kernels() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for map in [
            ExplicitFeatureMap::Linear { d: 3 },
            ExplicitFeatureMap::Poly2 { d: 2, offset: 1.0 },
            ExplicitFeatureMap::Poly2 { d: 3, offset: 0.5 },
        ] {
            let d = match map {
                ExplicitFeatureMap::Linear { d } | ExplicitFeatureMap::Poly2 { d, .. } => d,
            };
            for _ in 0..50 {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                let explicit = map.map(&x).dot(&map.map(&y));
                let k = kernel_eval(&map.kernel(), &x, &y).unwrap();
                assert!((explicit - k).abs() <= 1e-10 * k.abs().max(1.0));
            }
        }
        assert_eq!(ExplicitFeatureMap::Poly2 { d: 2, offset: 1.0 }.dim(), 6);
    }
}
