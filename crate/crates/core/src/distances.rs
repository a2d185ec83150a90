//! Kernel-space L²-Wasserstein and KL divergences, their native-space
//! counterparts, and the pairwise distance-matrix builder.
//!
//! Every divergence is split into a per-set part (Gram block, centered
//! trace, Woodbury factors, moments) and a per-pair part. The single-pair
//! functions and [`distance_matrix`] share that split, so a matrix entry is
//! bit-identical to the corresponding direct call.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{self, clamp_nonnegative, GaussianMoments};
use crate::kernel::{self, centering, gram, gram_self, CenteringFactors, Kernel, SampleSet, WoodburyFactors};
use crate::linalg;

/// Tolerance for roundoff negatives in squared distances.
const NEG_TOL: f64 = 1e-9;

/// Which divergence a distance matrix holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Gaussian W₂ on native-space moments.
    W2,
    /// W₂ between the Gaussian approximations in kernel feature space.
    KernelW2,
    /// Symmetrized Gaussian KL on native-space moments.
    KlSym,
    /// Symmetrized KL in kernel feature space.
    KernelKlSym,
    /// Squared maximum mean discrepancy.
    Mmd,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::W2, Metric::KernelW2, Metric::KlSym, Metric::KernelKlSym, Metric::Mmd];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::W2 => "w2",
            Metric::KernelW2 => "kernel_w2",
            Metric::KlSym => "kl_sym",
            Metric::KernelKlSym => "kernel_kl_sym",
            Metric::Mmd => "mmd",
        }
    }

    /// Metrics that evaluate a kernel.
    pub fn uses_kernel(&self) -> bool {
        matches!(self, Metric::KernelW2 | Metric::KernelKlSym | Metric::Mmd)
    }

    /// Metrics whose natural value is a squared distance.
    pub fn is_squared_distance(&self) -> bool {
        matches!(self, Metric::W2 | Metric::KernelW2)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::input(format!("unknown metric '{s}'")))
    }
}

/// Parameters shared by all divergences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceOptions {
    pub kernel: Kernel,
    /// Ridge added to feature-space covariances for KL (and to singular
    /// native covariances in [`kl_sym_gaussian`]).
    pub rho: f64,
    /// Report W₂² (true) or W₂ (false).
    pub report_squared: bool,
}

impl Default for DivergenceOptions {
    fn default() -> Self {
        DivergenceOptions {
            kernel: Kernel::default(),
            rho: 0.1,
            report_squared: true,
        }
    }
}

impl DivergenceOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::input(format!("rho must be positive, got {}", self.rho)));
        }
        match self.kernel {
            Kernel::Rbf { gamma } => Kernel::rbf(gamma).map(|_| ()),
            Kernel::Polynomial { degree, offset } => Kernel::polynomial(degree, offset).map(|_| ()),
            Kernel::Linear => Ok(()),
        }
    }
}

/// Per-set quantities reused across every pair the set takes part in.
struct KernelSide<'a> {
    set: &'a SampleSet,
    k: DMatrix<f64>,
    cf: CenteringFactors,
    /// `sᵀKs`, the squared norm of the mean embedding.
    mean_sq: f64,
    /// `tr(JJᵀK) = tr(Σ)`.
    trace_cov: f64,
}

impl<'a> KernelSide<'a> {
    fn new(kernel: &Kernel, set: &'a SampleSet) -> Result<Self> {
        let k = gram_self(kernel, set);
        if !linalg::all_finite(&k) {
            return Err(Error::numeric(format!("non-finite Gram entries for set '{}'", set.id())));
        }
        let cf = centering(set.len())?;
        let trace_cov = kernel::trace_centered(&k, &cf)?;
        let mean_sq = k.mean();
        Ok(KernelSide { set, k, cf, mean_sq, trace_cov })
    }
}

/// Extra per-set state for the KL divergence.
struct KlSide {
    wood: WoodburyFactors,
    /// `K s`.
    ks: DVector<f64>,
    /// `log |I − K B|`.
    log_det_ikb: f64,
    /// `tr(B K)`.
    trace_bk: f64,
}

impl KlSide {
    fn new(side: &KernelSide<'_>, rho: f64) -> Result<Self> {
        let wood = kernel::woodbury(&side.k, &side.cf, rho)?;
        let n = side.k.nrows();
        let ikb = DMatrix::identity(n, n) - &side.k * &wood.b_matrix;
        let (sign, log_det_ikb) = linalg::signed_log_det(&ikb);
        if !(sign > 0.0 && log_det_ikb.is_finite()) {
            return Err(Error::numeric(format!(
                "|I - KB| is not positive for set '{}'; Gram matrix is not PSD",
                side.set.id()
            )));
        }
        let ks = &side.k * side.cf.s();
        let trace_bk = (&wood.b_matrix * &side.k).trace();
        Ok(KlSide { wood, ks, log_det_ikb, trace_bk })
    }
}

fn check_dims(x: &SampleSet, y: &SampleSet) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch(x.dim(), y.dim()));
    }
    Ok(())
}

fn mmd_from_sides(a: &KernelSide<'_>, b: &KernelSide<'_>, k12: &DMatrix<f64>) -> Result<f64> {
    let value = a.mean_sq - 2.0 * k12.mean() + b.mean_sq;
    let scale = a.mean_sq.abs() + b.mean_sq.abs();
    clamp_nonnegative(value, 1e-10 * scale.max(1.0), "squared MMD")
}

/// `‖μ1 − μ2‖²` between kernel mean embeddings (biased V-statistic).
pub fn mmd_sq(x: &SampleSet, y: &SampleSet, kernel: &Kernel) -> Result<f64> {
    check_dims(x, y)?;
    let a = KernelSide::new(kernel, x)?;
    let b = KernelSide::new(kernel, y)?;
    let k12 = gram(kernel, x, y)?;
    mmd_from_sides(&a, &b, &k12)
}

/// The parts of the kernel W₂² for one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelW2Terms {
    /// `‖μ1 − μ2‖²`.
    pub mmd_sq: f64,
    /// `tr(Σ1) + tr(Σ2) − 2 tr((Σ2Σ1)^{1/2})`.
    pub bures: f64,
}

fn kernel_w2_terms(a: &KernelSide<'_>, b: &KernelSide<'_>, k12: &DMatrix<f64>) -> Result<KernelW2Terms> {
    let mmd = mmd_from_sides(a, b, k12)?;
    if a.set.same_samples(b.set) {
        // The Bures part vanishes exactly; the SVD route would leave roundoff.
        return Ok(KernelW2Terms { mmd_sq: mmd, bures: 0.0 });
    }
    let g = kernel::center_between(&a.cf, k12, &b.cf)?;
    let cross = linalg::nuclear_norm(&g)?;
    let bures = a.trace_cov + b.trace_cov - 2.0 * cross;
    let scale = (a.trace_cov + b.trace_cov).abs().max(1.0);
    let bures = clamp_nonnegative(bures, NEG_TOL * scale, "Bures term")?;
    Ok(KernelW2Terms { mmd_sq: mmd, bures })
}

fn finish_w2(value: f64, opts: &DivergenceOptions) -> f64 {
    if opts.report_squared {
        value
    } else {
        value.sqrt()
    }
}

/// Decomposition of the kernel W₂² into its mean and covariance parts.
pub fn kernel_w2_terms_of(x: &SampleSet, y: &SampleSet, kernel: &Kernel) -> Result<KernelW2Terms> {
    check_dims(x, y)?;
    let a = KernelSide::new(kernel, x)?;
    let b = KernelSide::new(kernel, y)?;
    let k12 = gram(kernel, x, y)?;
    kernel_w2_terms(&a, &b, &k12)
}

/// Squared L²-Wasserstein distance between the Gaussian approximations of
/// `x` and `y` in kernel feature space (the root when
/// `opts.report_squared` is false).
pub fn kernel_w2_sq(x: &SampleSet, y: &SampleSet, opts: &DivergenceOptions) -> Result<f64> {
    opts.validate()?;
    let t = kernel_w2_terms_of(x, y, &opts.kernel)?;
    Ok(finish_w2(t.mmd_sq + t.bures, opts))
}

/// The four θ-terms and remaining pieces of `2·KL(N1 ‖ N2)` for one
/// ordered pair, in kernel form.
fn kernel_kl_directed(
    a: &KernelSide<'_>,
    b: &KernelSide<'_>,
    kl_a: &KlSide,
    kl_b: &KlSide,
    k12: &DMatrix<f64>,
    rho: f64,
) -> Result<f64> {
    let b2 = &kl_b.wood.b_matrix;
    let s1 = a.cf.s();
    let s2 = b.cf.s();
    // w = K21 s1, z = K22 s2
    let w = k12.tr_mul(s1);
    let z = &kl_b.ks;
    let b2w = b2 * &w;
    let b2z = b2 * z;

    let theta_121 = a.mean_sq - w.dot(&b2w);
    let theta_222 = b.mean_sq - z.dot(&b2z);
    let theta_122 = s1.dot(&(k12 * s2)) - w.dot(&b2z);
    let theta_221 = s2.dot(&w) - z.dot(&b2w);
    let quad = (theta_121 + theta_222 - theta_122 - theta_221) / rho;

    let log_det = kl_a.log_det_ikb - kl_b.log_det_ikb;

    // tr(S1 K12 B2 K21) = tr(P B2 Pᵀ) with P = J1 K12.
    let p = k12_row_centered(k12, &a.cf);
    let cross = (&p * b2).component_mul(&p).sum();
    let trace = (a.trace_cov - cross) / rho - kl_b.trace_bk;

    let two_kl = quad + log_det + trace;
    let value = 0.5 * two_kl;
    let scale = (quad.abs() + (a.trace_cov / rho).abs() + kl_b.trace_bk.abs()).max(1.0);
    if value < -1e-8 * scale {
        return Err(Error::numeric(format!(
            "kernel KL({} || {}) is negative beyond roundoff: {value:e}",
            a.set.id(),
            b.set.id()
        )));
    }
    Ok(value.max(0.0))
}

/// `J1 K12`: subtract column means, scale by `1/√n`.
fn k12_row_centered(k12: &DMatrix<f64>, cf: &CenteringFactors) -> DMatrix<f64> {
    let n = k12.nrows();
    let scale = 1.0 / (n as f64).sqrt();
    let mut p = k12.clone();
    for mut col in p.column_iter_mut() {
        let mean = col.mean();
        col.apply(|v| *v = scale * (*v - mean));
    }
    debug_assert_eq!(cf.n(), n);
    p
}

/// KL divergence between the ρ-regularized Gaussian approximations of `x`
/// and `y` in kernel feature space.
pub fn kernel_kl(x: &SampleSet, y: &SampleSet, opts: &DivergenceOptions) -> Result<f64> {
    opts.validate()?;
    check_dims(x, y)?;
    let a = KernelSide::new(&opts.kernel, x)?;
    let b = KernelSide::new(&opts.kernel, y)?;
    let kl_a = KlSide::new(&a, opts.rho)?;
    let kl_b = KlSide::new(&b, opts.rho)?;
    let k12 = gram(&opts.kernel, x, y)?;
    kernel_kl_directed(&a, &b, &kl_a, &kl_b, &k12, opts.rho)
}

fn kernel_kl_sym_sides(
    a: &KernelSide<'_>,
    b: &KernelSide<'_>,
    kl_a: &KlSide,
    kl_b: &KlSide,
    k12: &DMatrix<f64>,
    rho: f64,
) -> Result<f64> {
    let forward = kernel_kl_directed(a, b, kl_a, kl_b, k12, rho)?;
    let k21 = k12.transpose();
    let backward = kernel_kl_directed(b, a, kl_b, kl_a, &k21, rho)?;
    Ok(0.5 * (forward + backward))
}

/// `½[KL(x‖y) + KL(y‖x)]` in kernel feature space.
pub fn kernel_kl_sym(x: &SampleSet, y: &SampleSet, opts: &DivergenceOptions) -> Result<f64> {
    opts.validate()?;
    check_dims(x, y)?;
    // Each directed term is computed identically from either side and the
    // final sum commutes, so swapping the arguments is bit-exact.
    let a = KernelSide::new(&opts.kernel, x)?;
    let b = KernelSide::new(&opts.kernel, y)?;
    let kl_a = KlSide::new(&a, opts.rho)?;
    let kl_b = KlSide::new(&b, opts.rho)?;
    let k12 = gram(&opts.kernel, x, y)?;
    kernel_kl_sym_sides(&a, &b, &kl_a, &kl_b, &k12, opts.rho)
}

fn ridged(m: &GaussianMoments, rho: f64) -> GaussianMoments {
    let d = m.dim();
    GaussianMoments {
        mean: m.mean.clone(),
        cov: &m.cov + DMatrix::identity(d, d) * rho,
    }
}

fn kl_sym_moments(a: &GaussianMoments, b: &GaussianMoments, rho: f64) -> Result<f64> {
    let (a, b) = if gaussian::strictly_pd(&a.cov) && gaussian::strictly_pd(&b.cov) {
        (a.clone(), b.clone())
    } else {
        (ridged(a, rho), ridged(b, rho))
    };
    let forward = gaussian::kl_gaussian(&a, &b)?;
    let backward = gaussian::kl_gaussian(&b, &a)?;
    Ok(0.5 * (forward + backward))
}

/// Symmetrized Gaussian KL on native-space moments. When either covariance
/// is not strictly positive definite, `ρI` is added to both.
pub fn kl_sym_gaussian(x: &SampleSet, y: &SampleSet, rho: f64) -> Result<f64> {
    check_dims(x, y)?;
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::input(format!("rho must be positive, got {rho}")));
    }
    kl_sym_moments(&gaussian::moments(x), &gaussian::moments(y), rho)
}

/// Gaussian W₂² on native-space moments (root when `report_squared` is off).
pub fn w2_native(x: &SampleSet, y: &SampleSet, opts: &DivergenceOptions) -> Result<f64> {
    check_dims(x, y)?;
    let v = gaussian::w2_gaussian_sq(&gaussian::moments(x), &gaussian::moments(y))?;
    Ok(finish_w2(v, opts))
}

/// Dispatches on `metric`. `opts.report_squared` only affects W₂ metrics.
pub fn divergence(metric: Metric, x: &SampleSet, y: &SampleSet, opts: &DivergenceOptions) -> Result<f64> {
    match metric {
        Metric::W2 => w2_native(x, y, opts),
        Metric::KernelW2 => kernel_w2_sq(x, y, opts),
        Metric::KlSym => kl_sym_gaussian(x, y, opts.rho),
        Metric::KernelKlSym => kernel_kl_sym(x, y, opts),
        Metric::Mmd => mmd_sq(x, y, &opts.kernel),
    }
}

/// Symmetric matrix of pairwise divergences over labeled sample sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    /// `None` when read back from CSV, which does not carry the tag.
    pub metric: Option<Metric>,
    pub values: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct DistanceMatrixJson {
    labels: Vec<String>,
    metric: Option<Metric>,
    values: Vec<Vec<f64>>,
}

/// Formats a float with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl DistanceMatrix {
    pub fn new(labels: Vec<String>, metric: Option<Metric>, values: DMatrix<f64>) -> Result<Self> {
        let dm = DistanceMatrix { labels, metric, values };
        dm.validate()?;
        Ok(dm)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Symmetric within 1e-9, near-zero diagonal, nonnegative, finite.
    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.values.shape() != (n, n) {
            return Err(Error::input(format!(
                "{} labels but a {}x{} matrix",
                n,
                self.values.nrows(),
                self.values.ncols()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let v = self.values[(i, j)];
                if !v.is_finite() {
                    return Err(Error::input(format!("non-finite distance at ({i}, {j})")));
                }
                if v < -1e-9 {
                    return Err(Error::input(format!("negative distance {v} at ({i}, {j})")));
                }
                if (v - self.values[(j, i)]).abs() > 1e-9 {
                    return Err(Error::input(format!("distance matrix is not symmetric at ({i}, {j})")));
                }
            }
            if self.values[(i, i)] > 1e-9 {
                return Err(Error::input(format!("nonzero diagonal at {i}")));
            }
        }
        Ok(())
    }

    /// Header row of labels, then the square body, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.labels.iter().map(|l| csv_field(l)).collect::<Vec<_>>().join(","));
        out.push('\n');
        for i in 0..self.len() {
            let row: Vec<String> = (0..self.len()).map(|j| format_f64(self.values[(i, j)])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::input("empty distance CSV"))?;
        let labels: Vec<String> = split_csv_line(header);
        let n = labels.len();
        let mut values = DMatrix::zeros(n, n);
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            if i >= n {
                return Err(Error::input("distance CSV has more rows than labels"));
            }
            let cells = split_csv_line(line);
            if cells.len() != n {
                return Err(Error::input(format!("row {} has {} cells, expected {n}", i + 1, cells.len())));
            }
            for (j, c) in cells.iter().enumerate() {
                values[(i, j)] = c
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::input(format!("bad number '{c}' at row {}", i + 1)))?;
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::input(format!("distance CSV has {rows} rows for {n} labels")));
        }
        DistanceMatrix::new(labels, None, values)
    }

    pub fn to_json(&self) -> String {
        let doc = DistanceMatrixJson {
            labels: self.labels.clone(),
            metric: self.metric,
            values: (0..self.len())
                .map(|i| self.values.row(i).iter().copied().collect())
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("distance matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DistanceMatrixJson =
            serde_json::from_str(text).map_err(|e| Error::input(format!("bad distance JSON: {e}")))?;
        let n = doc.labels.len();
        if doc.values.len() != n || doc.values.iter().any(|r| r.len() != n) {
            return Err(Error::input("distance JSON values are not square over the labels"));
        }
        let values = DMatrix::from_fn(n, n, |i, j| doc.values[i][j]);
        DistanceMatrix::new(doc.labels, doc.metric, values)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.trim_end_matches('\r').chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

enum Prepared<'a> {
    Native(Vec<GaussianMoments>),
    Kernel(Vec<KernelSide<'a>>),
    KernelKl(Vec<KernelSide<'a>>, Vec<KlSide>),
}

fn prepare<'a>(sets: &'a [SampleSet], metric: Metric, opts: &DivergenceOptions) -> Result<Prepared<'a>> {
    let named = |i: usize, e: Error| match e {
        Error::Numeric(m) => Error::Numeric(format!("set '{}': {m}", sets[i].id())),
        Error::Input(m) => Error::Input(format!("set '{}': {m}", sets[i].id())),
        other => other,
    };
    Ok(match metric {
        Metric::W2 | Metric::KlSym => Prepared::Native(sets.iter().map(gaussian::moments).collect()),
        Metric::KernelW2 | Metric::Mmd => Prepared::Kernel(
            sets.iter()
                .enumerate()
                .map(|(i, s)| KernelSide::new(&opts.kernel, s).map_err(|e| named(i, e)))
                .collect::<Result<_>>()?,
        ),
        Metric::KernelKlSym => {
            let sides: Vec<KernelSide<'a>> = sets
                .iter()
                .enumerate()
                .map(|(i, s)| KernelSide::new(&opts.kernel, s).map_err(|e| named(i, e)))
                .collect::<Result<_>>()?;
            let kls = sides
                .iter()
                .enumerate()
                .map(|(i, s)| KlSide::new(s, opts.rho).map_err(|e| named(i, e)))
                .collect::<Result<_>>()?;
            Prepared::KernelKl(sides, kls)
        }
    })
}

fn pair_value(prep: &Prepared<'_>, metric: Metric, i: usize, j: usize, opts: &DivergenceOptions) -> Result<f64> {
    match prep {
        Prepared::Native(m) => match metric {
            Metric::W2 => gaussian::w2_gaussian_sq(&m[i], &m[j]).map(|v| finish_w2(v, opts)),
            _ => kl_sym_moments(&m[i], &m[j], opts.rho),
        },
        Prepared::Kernel(sides) => {
            let k12 = gram(&opts.kernel, sides[i].set, sides[j].set)?;
            let t = kernel_w2_terms(&sides[i], &sides[j], &k12)?;
            Ok(match metric {
                Metric::Mmd => t.mmd_sq,
                _ => finish_w2(t.mmd_sq + t.bures, opts),
            })
        }
        Prepared::KernelKl(sides, kls) => {
            let k12 = gram(&opts.kernel, sides[i].set, sides[j].set)?;
            kernel_kl_sym_sides(&sides[i], &sides[j], &kls[i], &kls[j], &k12, opts.rho)
        }
    }
}

/// Pairwise divergence matrix using the default worker count.
pub fn distance_matrix(sets: &[SampleSet], metric: Metric, opts: &DivergenceOptions) -> Result<DistanceMatrix> {
    distance_matrix_with_workers(sets, metric, opts, 0)
}

/// Pairwise divergence matrix. `workers == 0` picks the runtime default;
/// the output does not depend on the worker count.
pub fn distance_matrix_with_workers(
    sets: &[SampleSet],
    metric: Metric,
    opts: &DivergenceOptions,
    workers: usize,
) -> Result<DistanceMatrix> {
    opts.validate()?;
    if sets.len() < 2 {
        return Err(Error::input("distance matrix needs at least two sample sets"));
    }
    let d = sets[0].dim();
    if let Some(bad) = sets.iter().find(|s| s.dim() != d) {
        return Err(Error::input(format!(
            "set '{}' has dimension {}, expected {d}",
            bad.id(),
            bad.dim()
        )));
    }
    let prep = prepare(sets, metric, opts)?;
    let n = sets.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let eval = |&(i, j): &(usize, usize)| {
        pair_value(&prep, metric, i, j, opts).map_err(|e| {
            let msg = format!("pair ('{}', '{}'): {e}", sets[i].id(), sets[j].id());
            if e.is_input() {
                Error::Input(msg)
            } else {
                Error::Numeric(msg)
            }
        })
    };
    let results: Vec<Result<f64>> = run_pairs(&pairs, workers, eval);

    let mut values = DMatrix::zeros(n, n);
    for (&(i, j), r) in pairs.iter().zip(results) {
        let v = r?;
        values[(i, j)] = v;
        values[(j, i)] = v;
    }
    let values = linalg::symmetrize(&values);
    DistanceMatrix::new(sets.iter().map(|s| s.id().to_string()).collect(), Some(metric), values)
}

#[cfg(feature = "parallel")]
fn run_pairs<F>(pairs: &[(usize, usize)], workers: usize, eval: F) -> Vec<Result<f64>>
where
    F: Fn(&(usize, usize)) -> Result<f64> + Sync + Send,
{
    use rayon::prelude::*;
    if workers == 1 {
        return pairs.iter().map(eval).collect();
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    match builder.build() {
        Ok(pool) => pool.install(|| pairs.par_iter().map(&eval).collect()),
        Err(_) => pairs.iter().map(eval).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_pairs<F>(pairs: &[(usize, usize)], _workers: usize, eval: F) -> Vec<Result<f64>>
where
    F: Fn(&(usize, usize)) -> Result<f64>,
{
    pairs.iter().map(eval).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ExplicitFeatureMap;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn scalars(id: &str, v: &[f64]) -> SampleSet {
        SampleSet::from_scalars(id, v).unwrap()
    }

    fn random_set(rng: &mut impl Rng, id: &str, n: usize, d: usize) -> SampleSet {
        let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        SampleSet::new(id, n, d, data).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn mmd_examples() {
        let x = scalars("x", &[0.1, 0.4, 0.9]);
        assert_eq!(mmd_sq(&x, &x, &Kernel::default()).unwrap(), 0.0);
        assert_eq!(mmd_sq(&scalars("a", &[0.0]), &scalars("b", &[2.0]), &Kernel::Linear).unwrap(), 4.0);
        let v = mmd_sq(&scalars("a", &[0.0]), &scalars("b", &[1.0]), &Kernel::default()).unwrap();
        assert!((v - 2.0 * (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((v - 1.2642411).abs() < 1e-7);
        let two_d = SampleSet::from_rows("c", &[vec![0.0, 1.0]]).unwrap();
        assert!(mmd_sq(&x, &two_d, &Kernel::Linear).is_err());
    }

    #[test]
    fn kernel_w2_examples() {
        let opts = DivergenceOptions::default();
        let x = scalars("x", &[0.2, 0.5, 0.55, 0.9]);
        assert!(kernel_w2_sq(&x, &x, &opts).unwrap().abs() < 1e-12);
        let v = kernel_w2_sq(&scalars("a", &[0.0]), &scalars("b", &[1.0]), &opts).unwrap();
        assert!((v - 1.2642411).abs() < 1e-7);
        let root = kernel_w2_sq(
            &scalars("a", &[0.0]),
            &scalars("b", &[1.0]),
            &DivergenceOptions { report_squared: false, ..opts },
        )
        .unwrap();
        assert!((root * root - v).abs() < 1e-14);
    }

    #[test]
    fn linear_kernel_w2_reduces_to_gaussian_w2() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let opts = DivergenceOptions { kernel: Kernel::Linear, ..Default::default() };
        for _ in 0..50 {
            let d = rng.random_range(1..=3);
            let nx = rng.random_range(1..=15);
            let x = random_set(&mut rng, "x", nx, d);
            let ny = rng.random_range(1..=15);
            let y = random_set(&mut rng, "y", ny, d);
            let k = kernel_w2_sq(&x, &y, &opts).unwrap();
            let g = w2_native(&x, &y, &opts).unwrap();
            assert!(rel(k, g) < 1e-8, "kernel {k} native {g}");
        }
    }

    #[test]
    fn polynomial_kernel_matches_explicit_feature_space() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let map = ExplicitFeatureMap::Poly2 { d: 2, offset: 1.0 };
        let opts = DivergenceOptions { kernel: map.kernel(), ..Default::default() };
        for _ in 0..25 {
            let nx = rng.random_range(2..=15);
            let x = random_set(&mut rng, "x", nx, 2);
            let ny = rng.random_range(2..=15);
            let y = random_set(&mut rng, "y", ny, 2);
            let w2 = kernel_w2_sq(&x, &y, &opts).unwrap();
            assert!(rel(w2, map.w2_sq(&x, &y)) < 1e-7);
            let kl = kernel_kl(&x, &y, &opts).unwrap();
            let kl_oracle = map.kl(&x, &y, opts.rho);
            assert!(rel(kl, kl_oracle) < 1e-7, "kernel {kl} explicit {kl_oracle}");
            let sym = kernel_kl_sym(&x, &y, &opts).unwrap();
            let sym_oracle = 0.5 * (kl_oracle + map.kl(&y, &x, opts.rho));
            assert!(rel(sym, sym_oracle) < 1e-7);
        }
    }

    #[test]
    fn kernel_kl_identity_cases() {
        let opts = DivergenceOptions::default();
        let x = scalars("x", &[0.1, 0.3, 0.35, 0.8, 0.95]);
        assert!(kernel_kl(&x, &x, &opts).unwrap().abs() < 1e-10);
        assert!(kernel_kl_sym(&x, &x, &opts).unwrap().abs() < 1e-10);
        let c = scalars("c", &[0.4; 6]);
        assert!(kernel_kl(&c, &c.clone(), &opts).unwrap().abs() < 1e-10);
    }

    #[test]
    fn log_det_matches_woodbury_identity() {
        // |I − K B| = ρⁿ / |M|
        let x = scalars("x", &[0.0, 0.2, 0.7, 1.3, 1.31]);
        let side = KernelSide::new(&Kernel::default(), &x).unwrap();
        let kl = KlSide::new(&side, 0.1).unwrap();
        let expected = 5.0 * 0.1f64.ln() - kl.wood.log_det_m;
        assert!((kl.log_det_ikb - expected).abs() < 1e-9);
    }

    #[test]
    fn kernel_kl_sym_is_bit_symmetric() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let opts = DivergenceOptions::default();
        for _ in 0..10 {
            let x = random_set(&mut rng, "x", 7, 2);
            let y = random_set(&mut rng, "y", 9, 2);
            assert_eq!(kernel_kl_sym(&x, &y, &opts).unwrap(), kernel_kl_sym(&y, &x, &opts).unwrap());
        }
    }

    #[test]
    fn kl_sym_gaussian_examples() {
        let x = scalars("x", &[0.0, 1.0, 3.0]);
        assert!(kl_sym_gaussian(&x, &x, 0.1).unwrap().abs() < 1e-12);
        // Same variance 1, means 0 and 2: both directions give 2.
        let a = scalars("a", &[-1.0, 1.0]);
        let b = scalars("b", &[1.0, 3.0]);
        assert!((kl_sym_gaussian(&a, &b, 0.1).unwrap() - 2.0).abs() < 1e-12);
        // Singletons: covariance 0 → ridged to ρ, KL = (Δm)²/(2ρ) each way.
        let v = kl_sym_gaussian(&scalars("p", &[0.0]), &scalars("q", &[0.5]), 0.1).unwrap();
        assert!((v - 0.25 / 0.2).abs() < 1e-12);
    }

    #[test]
    fn distance_matrix_examples() {
        let opts = DivergenceOptions { kernel: Kernel::Linear, ..Default::default() };
        let same = vec![scalars("a", &[0.1, 0.5]), scalars("b", &[0.1, 0.5])];
        for metric in Metric::ALL {
            let dm = distance_matrix(&same, metric, &opts).unwrap();
            assert!(dm.values.iter().all(|v| v.abs() < 1e-12), "{metric}");
        }
        let sets = vec![scalars("s0", &[0.0]), scalars("s1", &[1.0]), scalars("s3", &[3.0])];
        let dm = distance_matrix(&sets, Metric::Mmd, &opts).unwrap();
        assert_eq!(dm.get(0, 1), 1.0);
        assert_eq!(dm.get(0, 2), 9.0);
        assert_eq!(dm.get(1, 2), 4.0);
        assert_eq!(dm.get(2, 1), 4.0);
        assert!(distance_matrix(&sets[..1], Metric::Mmd, &opts).is_err());
    }

    #[test]
    fn distance_matrix_entries_equal_direct_calls() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
        let sets: Vec<SampleSet> = (0..5).map(|i| random_set(&mut rng, &format!("s{i}"), 6, 1)).collect();
        let opts = DivergenceOptions::default();
        for metric in Metric::ALL {
            let dm = distance_matrix_with_workers(&sets, metric, &opts, 3).unwrap();
            for i in 0..5 {
                for j in (i + 1)..5 {
                    let direct = divergence(metric, &sets[i], &sets[j], &opts).unwrap();
                    assert!((dm.get(i, j) - direct).abs() <= 1e-12 * direct.max(1.0), "{metric}");
                }
            }
        }
    }

    #[test]
    fn distance_matrix_names_failing_pair() {
        let opts = DivergenceOptions::default();
        let sets = vec![scalars("a", &[0.0]), SampleSet::from_rows("b", &[vec![0.0, 1.0]]).unwrap()];
        let err = distance_matrix(&sets, Metric::KernelW2, &opts).unwrap_err();
        assert!(err.to_string().contains("'b'"), "{err}");
    }

    #[test]
    fn csv_and_json_round_trip() {
        let sets = vec![scalars("a,1", &[0.0, 0.3]), scalars("b", &[1.0, 0.2]), scalars("c", &[0.4, 0.9])];
        let dm = distance_matrix(&sets, Metric::KernelW2, &DivergenceOptions::default()).unwrap();
        let back = DistanceMatrix::from_csv(&dm.to_csv()).unwrap();
        assert_eq!(back.labels, dm.labels);
        assert_eq!(back.values, dm.values);
        let back = DistanceMatrix::from_json(&dm.to_json()).unwrap();
        assert_eq!(back, dm);
        assert!(dm.to_json().contains("\"kernel_w2\""));
    }

    #[test]
    fn from_csv_rejects_invalid_matrices() {
        assert!(DistanceMatrix::from_csv("a,b\n0,1\n2,0\n").is_err());
        assert!(DistanceMatrix::from_csv("a,b\n0,NaN\nNaN,0\n").is_err());
        assert!(DistanceMatrix::from_csv("a,b\n0,1\n").is_err());
        assert!(DistanceMatrix::from_csv("a,b\n0,-1\n-1,0\n").is_err());
        assert!(DistanceMatrix::from_csv("a,b\n0,1\n1,0\n").is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn kernel_w2_symmetric_nonnegative_triangle(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let opts = DivergenceOptions::default();
            let d = rng.random_range(1..=3);
            let mut mk = |id: &str| {
                let n = rng.random_range(1..=12);
                random_set(&mut rng, id, n, d)
            };
            let (x, y, z) = (mk("x"), mk("y"), mk("z"));
            let xy = kernel_w2_sq(&x, &y, &opts).unwrap();
            let yx = kernel_w2_sq(&y, &x, &opts).unwrap();
            prop_assert!((xy - yx).abs() <= 1e-9 * xy.max(1e-12));
            let t = kernel_w2_terms_of(&x, &y, &opts.kernel).unwrap();
            prop_assert!(t.bures >= -1e-9);
            let yz = kernel_w2_sq(&y, &z, &opts).unwrap();
            let xz = kernel_w2_sq(&x, &z, &opts).unwrap();
            prop_assert!(xz.sqrt() <= xy.sqrt() + yz.sqrt() + 1e-7);
            prop_assert!(kernel_kl(&x, &y, &opts).unwrap() >= -1e-8);
            prop_assert!(kernel_kl(&x, &x, &opts).unwrap().abs() <= 1e-10);
        }
    }
}
