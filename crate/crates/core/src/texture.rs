//! Grayscale texture descriptors: percentile masking, a pooled
//! gray-level co-occurrence matrix, and 25 Haralick-style features.
//!
//! Gray levels are 1-based inside the feature formulas and entropies are in
//! bits. Features with a vanishing denominator evaluate to 0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEVELS: usize = 64;
pub const DEFAULT_PERCENTILE: f64 = 5.0;
pub const FEATURE_COUNT: usize = 25;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "f01_autocorrelation",
    "f02_joint_average",
    "f03_cluster_prominence",
    "f04_cluster_shade",
    "f05_cluster_tendency",
    "f06_contrast",
    "f07_correlation",
    "f08_difference_entropy",
    "f09_dissimilarity",
    "f10_difference_variance",
    "f11_joint_energy",
    "f12_joint_entropy",
    "f13_inverse_difference",
    "f14_inverse_difference_moment",
    "f15_info_correlation_1",
    "f16_info_correlation_2",
    "f17_inverse_difference_moment_normalized",
    "f18_inverse_difference_normalized",
    "f19_inverse_variance",
    "f20_sum_average",
    "f21_sum_entropy",
    "f22_sum_variance",
    "f23_haralick_correlation",
    "f24_joint_maximum",
    "f25_joint_variance",
];

/// Unit offsets (row, col) at 0°, 45°, 90° and 135°.
pub const OFFSETS: [(isize, isize); 4] = [(0, 1), (-1, 1), (-1, 0), (-1, -1)];

/// Row-major grid of intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    id: String,
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Builds an image from row-major pixels. At least two pixels are
    /// required so that a co-occurrence pair can exist.
    pub fn new(id: impl Into<String>, height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || height * width < 2 {
            return Err(Error::input(format!("image must have at least two pixels, got {height}x{width}")));
        }
        if pixels.len() != height * width {
            return Err(Error::DimensionMismatch(pixels.len(), height * width));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("image contains non-finite intensities"));
        }
        Ok(GrayImage { id: id.into(), height, width, pixels })
    }

    pub fn from_rows(id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::DimensionMismatch(bad.len(), width));
        }
        GrayImage::new(id, height, width, rows.concat())
    }

    /// Parses a grid of comma- or whitespace-separated numbers, one image
    /// row per line. Blank lines are ignored.
    pub fn from_csv_str(id: impl Into<String>, text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::input(format!("line {}: '{t}' is not a number", lineno + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        GrayImage::from_rows(id, &rows)
    }

    /// Decodes an 8- or 16-bit grayscale PNG (an alpha channel is ignored).
    #[cfg(feature = "png")]
    pub fn from_png_bytes(id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND);
        let mut reader = decoder.read_info().map_err(|e| Error::input(format!("PNG: {e}")))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::input("PNG: image too large"))?;
        let mut buf = vec![0u8; size];
        let frame = reader.next_frame(&mut buf).map_err(|e| Error::input(format!("PNG: {e}")))?;
        let channels = match frame.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            other => return Err(Error::input(format!("PNG: expected grayscale, found {other:?}"))),
        };
        let (h, w) = (frame.height as usize, frame.width as usize);
        let data = &buf[..frame.buffer_size()];
        let pixels: Vec<f64> = match frame.bit_depth {
            png::BitDepth::Sixteen => data
                .chunks_exact(2 * channels)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
                .collect(),
            _ => data.chunks_exact(channels).map(|c| c[0] as f64).collect(),
        };
        GrayImage::new(id, h, w, pixels)
    }

    /// Loads `.png` or a text grid, using the file stem as the id.
    pub fn load(path: &Path) -> Result<Self> {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let bytes = std::fs::read(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        let ext = path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
        let wrap = |e: Error| Error::input(format!("{}: {e}", path.display()));
        match ext.as_deref() {
            #[cfg(feature = "png")]
            Some("png") => GrayImage::from_png_bytes(id, &bytes).map_err(wrap),
            _ => {
                let text = String::from_utf8(bytes).map_err(|_| Error::input(format!("{}: not UTF-8 text", path.display())))?;
                GrayImage::from_csv_str(id, &text).map_err(wrap)
            }
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.width + c]
    }
}

/// Linear-interpolated order statistic, rank `p/100 · (N − 1)`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::input("percentile of an empty set"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::input(format!("percentile must lie in [0, 100], got {p}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// True where the intensity lies strictly above the given percentile.
/// Percentile 0 keeps every pixel.
pub fn threshold_mask(img: &GrayImage, pct: f64) -> Result<Vec<bool>> {
    let cut = percentile(&img.pixels, pct)?;
    let mask: Vec<bool> = if pct == 0.0 {
        vec![true; img.pixels.len()]
    } else {
        img.pixels.iter().map(|&v| v > cut).collect()
    };
    if !mask.iter().any(|&m| m) {
        return Err(Error::input("all pixels excluded by the intensity threshold"));
    }
    Ok(mask)
}

/// Equal-width bins over `[lo, hi]`; a value on an edge goes to the lower bin.
pub fn quantize(v: f64, lo: f64, hi: f64, levels: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let b = (levels as f64 * (v - lo) / (hi - lo)).ceil() as isize - 1;
    b.clamp(0, levels as isize - 1) as usize
}

/// Pooled, symmetric co-occurrence matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Glcm {
    levels: usize,
    counts: Vec<u64>,
    p: Vec<f64>,
}

impl Glcm {
    /// Normalizes a row-major `levels × levels` count matrix.
    pub fn from_counts(levels: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != levels * levels {
            return Err(Error::DimensionMismatch(counts.len(), levels * levels));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::input("co-occurrence matrix has no pairs"));
        }
        let p = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Glcm { levels, counts, p })
    }

    /// Wraps a probability matrix directly (no integer counts are kept).
    pub fn from_probabilities(levels: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != levels * levels {
            return Err(Error::DimensionMismatch(p.len(), levels * levels));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::input("probabilities must be finite and nonnegative"));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::input(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Glcm { levels, counts: Vec::new(), p })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Raw pair counts; empty when built from probabilities.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    /// `p[i][j]`, 0-based.
    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.levels + j]
    }
}

/// Co-occurrences at the four unit offsets, each pair counted in both
/// orders, restricted to pixels inside the mask. Intensities are quantized
/// over the masked range.
pub fn glcm(img: &GrayImage, mask: Option<&[bool]>, levels: usize) -> Result<Glcm> {
    if levels < 2 {
        return Err(Error::input(format!("levels must be at least 2, got {levels}")));
    }
    let all;
    let mask = match mask {
        Some(m) => {
            if m.len() != img.pixels.len() {
                return Err(Error::DimensionMismatch(m.len(), img.pixels.len()));
            }
            m
        }
        None => {
            all = vec![true; img.pixels.len()];
            &all[..]
        }
    };
    let (lo, hi) = img
        .pixels
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
    if lo > hi {
        return Err(Error::input("mask excludes every pixel"));
    }
    let q: Vec<usize> = img.pixels.iter().map(|&v| quantize(v, lo, hi, levels)).collect();
    let (h, w) = (img.height as isize, img.width as isize);
    let mut counts = vec![0u64; levels * levels];
    for r in 0..h {
        for c in 0..w {
            let a = (r * w + c) as usize;
            if !mask[a] {
                continue;
            }
            for (dr, dc) in OFFSETS {
                let (r2, c2) = (r + dr, c + dc);
                if r2 < 0 || r2 >= h || c2 < 0 || c2 >= w {
                    continue;
                }
                let b = (r2 * w + c2) as usize;
                if !mask[b] {
                    continue;
                }
                counts[q[a] * levels + q[b]] += 1;
                counts[q[b] * levels + q[a]] += 1;
            }
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::input("no neighboring pixel pair survives the mask"));
    }
    Glcm::from_counts(levels, counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_COUNT],
}

fn entropy(ps: impl IntoIterator<Item = f64>) -> f64 {
    ps.into_iter().filter(|&p| p > 0.0).map(|p| -p * p.log2()).sum()
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// The 25 features, in the order of [`FEATURE_NAMES`].
pub fn haralick25(g: &Glcm) -> FeatureVector {
    let ng = g.levels;
    let lv = |i: usize| (i + 1) as f64;
    let cells = || (0..ng).flat_map(move |i| (0..ng).map(move |j| (i, j, g.p(i, j))));

    let px: Vec<f64> = (0..ng).map(|i| (0..ng).map(|j| g.p(i, j)).sum()).collect();
    let py: Vec<f64> = (0..ng).map(|j| (0..ng).map(|i| g.p(i, j)).sum()).collect();
    let mu_x: f64 = px.iter().enumerate().map(|(i, p)| lv(i) * p).sum();
    let mu_y: f64 = py.iter().enumerate().map(|(j, p)| lv(j) * p).sum();
    let sd_x = px.iter().enumerate().map(|(i, p)| (lv(i) - mu_x).powi(2) * p).sum::<f64>().sqrt();
    let sd_y = py.iter().enumerate().map(|(j, p)| (lv(j) - mu_y).powi(2) * p).sum::<f64>().sqrt();

    // p_{x+y}(k) for k = i + j (1-based: 2..=2ng) and p_{x−y}(k) for k = |i − j|.
    let mut p_sum = vec![0.0; 2 * ng + 1];
    let mut p_diff = vec![0.0; ng];
    for (i, j, p) in cells() {
        p_sum[i + j + 2] += p;
        p_diff[i.abs_diff(j)] += p;
    }

    let autocorrelation: f64 = cells().map(|(i, j, p)| lv(i) * lv(j) * p).sum();
    let joint_average = mu_x;
    let cluster = |k: i32| cells().map(|(i, j, p)| (lv(i) + lv(j) - mu_x - mu_y).powi(k) * p).sum::<f64>();
    let contrast: f64 = cells().map(|(i, j, p)| (lv(i) - lv(j)).powi(2) * p).sum();
    let covariance: f64 = cells().map(|(i, j, p)| (lv(i) - mu_x) * (lv(j) - mu_y) * p).sum();
    let correlation = ratio(covariance, sd_x * sd_y);
    let difference_entropy = entropy(p_diff.iter().copied());
    let dissimilarity: f64 = cells().map(|(i, j, p)| i.abs_diff(j) as f64 * p).sum();
    let diff_mean: f64 = p_diff.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    let difference_variance: f64 = p_diff.iter().enumerate().map(|(k, p)| (k as f64 - diff_mean).powi(2) * p).sum();
    let joint_energy: f64 = g.p.iter().map(|p| p * p).sum();
    let joint_entropy = entropy(g.p.iter().copied());
    let inverse_difference: f64 = p_diff.iter().enumerate().map(|(k, p)| p / (1.0 + k as f64)).sum();
    let idm: f64 = p_diff.iter().enumerate().map(|(k, p)| p / (1.0 + (k * k) as f64)).sum();

    let hx = entropy(px.iter().copied());
    let hy = entropy(py.iter().copied());
    let (mut hxy1, mut hxy2) = (0.0, 0.0);
    for (i, j, p) in cells() {
        let m = px[i] * py[j];
        if m > 0.0 {
            hxy1 -= p * m.log2();
            hxy2 -= m * m.log2();
        }
    }
    let info_corr_1 = ratio(joint_entropy - hxy1, hx.max(hy));
    let info_corr_2 = (1.0 - (-2.0 * (hxy2 - joint_entropy)).exp()).max(0.0).sqrt();

    let n = ng as f64;
    let idmn: f64 = p_diff.iter().enumerate().map(|(k, p)| p / (1.0 + (k * k) as f64 / (n * n))).sum();
    let idn: f64 = p_diff.iter().enumerate().map(|(k, p)| p / (1.0 + k as f64 / n)).sum();
    let inverse_variance: f64 = p_diff.iter().enumerate().skip(1).map(|(k, p)| p / (k * k) as f64).sum();
    let sum_average: f64 = p_sum.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    let sum_entropy = entropy(p_sum.iter().copied());
    let sum_variance: f64 = p_sum.iter().enumerate().map(|(k, p)| (k as f64 - sum_average).powi(2) * p).sum();
    let haralick_correlation = ratio(autocorrelation - mu_x * mu_y, sd_x * sd_y);
    let joint_maximum = g.p.iter().copied().fold(0.0, f64::max);
    let joint_variance: f64 = cells().map(|(i, _, p)| (lv(i) - mu_x).powi(2) * p).sum();

    FeatureVector {
        values: [
            autocorrelation,
            joint_average,
            cluster(4),
            cluster(3),
            cluster(2),
            contrast,
            correlation,
            difference_entropy,
            dissimilarity,
            difference_variance,
            joint_energy,
            joint_entropy,
            inverse_difference,
            idm,
            info_corr_1,
            info_corr_2,
            idmn,
            idn,
            inverse_variance,
            sum_average,
            sum_entropy,
            sum_variance,
            haralick_correlation,
            joint_maximum,
            joint_variance,
        ],
    }
}

/// Mask, co-occurrence matrix and features for one image.
pub fn image_features(img: &GrayImage, pct: f64, levels: usize) -> Result<FeatureVector> {
    let mask = threshold_mask(img, pct)?;
    Ok(haralick25(&glcm(img, Some(&mask), levels)?))
}

/// Per-coordinate min–max scaling across rows; constant coordinates map to 0.
pub fn normalize_corpus(rows: &[FeatureVector]) -> Vec<FeatureVector> {
    let mut lo = [f64::INFINITY; FEATURE_COUNT];
    let mut hi = [f64::NEG_INFINITY; FEATURE_COUNT];
    for r in rows {
        for (k, &v) in r.values.iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    rows.iter()
        .map(|r| {
            let mut values = [0.0; FEATURE_COUNT];
            for k in 0..FEATURE_COUNT {
                let span = hi[k] - lo[k];
                values[k] = if span > 0.0 { ((r.values[k] - lo[k]) / span).clamp(0.0, 1.0) } else { 0.0 };
            }
            FeatureVector { values }
        })
        .collect()
}
