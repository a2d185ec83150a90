//! Kernel evaluation, Gram matrices and the centering algebra.
//!
//! Everything the kernel-space divergences need is expressed through three
//! Gram blocks `K11`, `K22`, `K12` and the centering factor
//! `J = (1/√n)(I − (1/n)·11ᵀ)`, for which `ΦJ` holds the mean-centered
//! mapped samples scaled by `1/√n`. Feature-space covariances never get
//! materialized: `tr(Σ) = tr(JJᵀK)` and the cross term of the Bures part is
//! the nuclear norm of `J1 K12 J2`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// One empirical distribution: `n` samples in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    id: String,
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl SampleSet {
    /// Builds a set from row-major data of `n` samples with `d` features each.
    pub fn new(id: impl Into<String>, n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::input("sample set needs at least one sample and one feature"));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch(data.len(), n * d));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("sample set contains non-finite values"));
        }
        Ok(SampleSet { id: id.into(), n, d, data })
    }

    pub fn from_rows(id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(bad.len(), d));
        }
        Self::new(id, rows.len(), d, rows.concat())
    }

    /// `n` scalar samples, i.e. an `n × 1` set.
    pub fn from_scalars(id: impl Into<String>, values: &[f64]) -> Result<Self> {
        Self::new(id, values.len(), 1, values.to_vec())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    /// True when both sets hold the same samples in the same order.
    pub fn same_samples(&self, other: &SampleSet) -> bool {
        self.n == other.n && self.d == other.d && self.data == other.data
    }

    /// The samples as an `n × d` matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.data)
    }
}

/// A positive-definite kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// `exp(−γ‖x − y‖²)`.
    Rbf { gamma: f64 },
    /// `(xᵀy + offset)^degree`.
    Polynomial { degree: u32, offset: f64 },
    /// `xᵀy`.
    Linear,
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::Rbf { gamma: 1.0 }
    }
}

impl Kernel {
    pub fn rbf(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::input(format!("rbf gamma must be positive, got {gamma}")));
        }
        Ok(Kernel::Rbf { gamma })
    }

    pub fn polynomial(degree: u32, offset: f64) -> Result<Self> {
        if degree == 0 {
            return Err(Error::input("polynomial degree must be at least 1"));
        }
        if !(offset >= 0.0 && offset.is_finite()) {
            return Err(Error::input(format!("polynomial offset must be nonnegative, got {offset}")));
        }
        Ok(Kernel::Polynomial { degree, offset })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Rbf { .. } => "rbf",
            Kernel::Polynomial { .. } => "polynomial",
            Kernel::Linear => "linear",
        }
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * sq).exp()
            }
            Kernel::Polynomial { degree, offset } => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                (dot + offset).powi(degree as i32)
            }
            Kernel::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }
}

/// `k(x, y)` for the given kernel.
pub fn kernel_eval(kernel: &Kernel, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(x.len(), y.len()));
    }
    Ok(kernel.eval_unchecked(x, y))
}

/// Gram matrix with entry `(i, j) = k(a_i, b_j)`.
pub fn gram(kernel: &Kernel, a: &SampleSet, b: &SampleSet) -> Result<DMatrix<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
        kernel.eval_unchecked(a.sample(i), b.sample(j))
    }))
}

/// `gram(kernel, a, a)`, evaluating only the upper triangle.
pub fn gram_self(kernel: &Kernel, a: &SampleSet) -> DMatrix<f64> {
    let n = a.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval_unchecked(a.sample(i), a.sample(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `s = (1/n)·1` and `J = (1/√n)(I − s·1ᵀ)` for a set of `n` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteringFactors {
    n: usize,
    s: DVector<f64>,
    j: DMatrix<f64>,
}

/// Builds the centering factors for `n` samples.
pub fn centering(n: usize) -> Result<CenteringFactors> {
    if n == 0 {
        return Err(Error::input("centering needs n >= 1"));
    }
    let nf = n as f64;
    let s = DVector::from_element(n, 1.0 / nf);
    let scale = 1.0 / nf.sqrt();
    let j = DMatrix::from_fn(n, n, |r, c| {
        let centered = if r == c { 1.0 - 1.0 / nf } else { -1.0 / nf };
        scale * centered
    });
    Ok(CenteringFactors { n, s, j })
}

impl CenteringFactors {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn j(&self) -> &DMatrix<f64> {
        &self.j
    }

    /// `S = JJᵀ = (1/n)(I − (1/n)·11ᵀ)`.
    pub fn s_matrix(&self) -> DMatrix<f64> {
        &self.j * self.j.transpose()
    }
}

/// `Jₗᵀ · k · Jᵣ` computed by double centering instead of two dense
/// products: `J` only removes means and rescales.
pub fn center_between(left: &CenteringFactors, k: &DMatrix<f64>, right: &CenteringFactors) -> Result<DMatrix<f64>> {
    if k.nrows() != left.n || k.ncols() != right.n {
        return Err(Error::input(format!(
            "matrix is {}x{}, centering expects {}x{}",
            k.nrows(),
            k.ncols(),
            left.n,
            right.n
        )));
    }
    let (n, m) = (left.n, right.n);
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).mean()).collect();
    let col_means: Vec<f64> = (0..m).map(|j| k.column(j).mean()).collect();
    let grand = k.mean();
    let scale = 1.0 / ((n as f64) * (m as f64)).sqrt();
    Ok(DMatrix::from_fn(n, m, |i, j| {
        scale * (k[(i, j)] - row_means[i] - col_means[j] + grand)
    }))
}

/// `tr(JJᵀK)`: the trace of the implied feature-space covariance.
pub fn trace_centered(k: &DMatrix<f64>, cf: &CenteringFactors) -> Result<f64> {
    if k.nrows() != cf.n || k.ncols() != cf.n {
        return Err(Error::input(format!(
            "gram is {}x{}, centering expects n = {}",
            k.nrows(),
            k.ncols(),
            cf.n
        )));
    }
    let nf = cf.n as f64;
    Ok((k.trace() - k.sum() / nf) / nf)
}

/// The three Gram blocks for a pair of sample sets plus their centering.
/// `K21` is `K12ᵀ` and is never stored.
#[derive(Debug, Clone)]
pub struct GramBundle {
    pub k11: DMatrix<f64>,
    pub k22: DMatrix<f64>,
    pub k12: DMatrix<f64>,
    pub cf1: CenteringFactors,
    pub cf2: CenteringFactors,
}

impl GramBundle {
    pub fn new(kernel: &Kernel, x: &SampleSet, y: &SampleSet) -> Result<Self> {
        let k12 = gram(kernel, x, y)?;
        Ok(GramBundle {
            k11: gram_self(kernel, x),
            k22: gram_self(kernel, y),
            k12,
            cf1: centering(x.len())?,
            cf2: centering(y.len())?,
        })
    }

    /// Assembles a bundle from precomputed blocks, checking shapes.
    pub fn from_blocks(k11: DMatrix<f64>, k22: DMatrix<f64>, k12: DMatrix<f64>) -> Result<Self> {
        let (n, m) = (k11.nrows(), k22.nrows());
        if !k11.is_square() || !k22.is_square() {
            return Err(Error::input("diagonal Gram blocks must be square"));
        }
        if k12.shape() != (n, m) {
            return Err(Error::input(format!(
                "cross block is {:?}, expected ({n}, {m})",
                k12.shape()
            )));
        }
        Ok(GramBundle {
            k11,
            k22,
            k12,
            cf1: centering(n)?,
            cf2: centering(m)?,
        })
    }

    /// The same pair seen from the other side.
    pub fn swapped(&self) -> GramBundle {
        GramBundle {
            k11: self.k22.clone(),
            k22: self.k11.clone(),
            k12: self.k12.transpose(),
            cf1: self.cf2.clone(),
            cf2: self.cf1.clone(),
        }
    }
}

/// `tr((K12 J2J2ᵀ K21 J1J1ᵀ)^{1/2})`, evaluated as the nuclear norm of
/// `G = J1ᵀ K12 J2`: `GGᵀ` has the same nonzero spectrum as that product.
pub fn trace_sqrt_cross(bundle: &GramBundle) -> Result<f64> {
    if !linalg::all_finite(&bundle.k12) || !linalg::all_finite(&bundle.k11) || !linalg::all_finite(&bundle.k22) {
        return Err(Error::numeric("non-finite Gram entries"));
    }
    let g = center_between(&bundle.cf1, &bundle.k12, &bundle.cf2)?;
    linalg::nuclear_norm(&g)
}

/// Factors of the regularized inverse
/// `(ΦJJᵀΦᵀ + ρI)⁻¹ = ρ⁻¹(I − ΦBΦᵀ)` with `M = ρI + JᵀKJ`, `B = JM⁻¹Jᵀ`.
#[derive(Debug, Clone)]
pub struct WoodburyFactors {
    pub rho: f64,
    pub m_matrix: DMatrix<f64>,
    pub b_matrix: DMatrix<f64>,
    /// `log |M|`, a by-product of the Cholesky factorization.
    pub log_det_m: f64,
}

pub fn woodbury(k: &DMatrix<f64>, cf: &CenteringFactors, rho: f64) -> Result<WoodburyFactors> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::input(format!("rho must be positive, got {rho}")));
    }
    let centered = center_between(cf, k, cf)?;
    let mut m = linalg::symmetrize(&centered);
    for i in 0..cf.n {
        m[(i, i)] += rho;
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numeric("Cholesky of M = rho*I + J'KJ failed; Gram matrix is not PSD"))?;
    let log_det_m = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let m_inv = chol.inverse();
    // J is symmetric, so Jᵀ M⁻¹ J = J M⁻¹ Jᵀ.
    let b = center_between(cf, &m_inv, cf)?;
    Ok(WoodburyFactors {
        rho,
        m_matrix: m,
        b_matrix: linalg::symmetrize(&b),
        log_det_m,
    })
}
