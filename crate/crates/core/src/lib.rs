//! Wasserstein and Kullback–Leibler divergences between empirical
//! distributions, in native space and in a reproducing-kernel feature space.
//!
//! A [`SampleSet`] is summarized either by its sample moments (native
//! metrics) or by Gram matrices (kernel metrics). Kernel divergences are the
//! Gaussian closed forms evaluated on the feature-space mean and covariance,
//! computed entirely through `n × n` kernel blocks:
//!
//! - kernel W₂² = MMD² + tr Σ₁ + tr Σ₂ − 2‖J₁ᵀK₁₂J₂‖_*
//! - kernel KL uses `H = Σ + ρI` with a Woodbury inverse and a determinant
//!   lemma, so the feature dimension never appears.
//!
//! The surrounding pipeline (texture features, distance matrices,
//! agglomerative clustering, contingency statistics) lives in [`texture`],
//! [`distances`] and [`clustering`].
//!
//! ```
//! use kwass::{kernel_w2_sq, DivergenceOptions, SampleSet};
//!
//! let x = SampleSet::from_scalars("x", &[0.0, 1.0, 2.0]).unwrap();
//! let y = SampleSet::from_scalars("y", &[0.5, 1.5, 4.0]).unwrap();
//! let d = kernel_w2_sq(&x, &y, &DivergenceOptions::default()).unwrap();
//! assert!(d > 0.0);
//! ```

pub mod clustering;
pub mod distances;
pub mod error;
pub mod gaussian;
pub mod kernel;
pub mod linalg;
pub mod oracle;
pub mod synth;
pub mod texture;

pub use clustering::{agglomerate, chi_square, contingency, cut, prediction_rates, ContingencyTable, Dendrogram, Linkage};
pub use distances::{
    distance_matrix, distance_matrix_with_workers, divergence, kernel_kl, kernel_kl_sym, kernel_w2_sq, kl_sym_gaussian,
    mmd_sq, w2_native, DistanceMatrix, DivergenceOptions, Metric,
};
pub use error::{Error, Result};
pub use gaussian::{kl_gaussian, moments, w2_gaussian_sq, GaussianMoments};
pub use kernel::{Kernel, SampleSet};
pub use texture::{glcm, haralick25, normalize_corpus, threshold_mask, FeatureVector, Glcm, GrayImage};
