//! Synthetic two-population corpora of scalar sample sets.
//!
//! Clean sets draw `μ + σz`; noisy sets draw `μ + σ·g(z)` where `g` is a
//! standardized exponential warp. Both classes share mean and variance, so
//! they differ only in shape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::SampleSet;

pub const CLEAN: &str = "clean";
pub const NOISY: &str = "noisy";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Sets per class.
    pub per_class: usize,
    /// Scalar samples per set.
    pub samples: usize,
    /// Strength of the warp applied to the noisy class; 0 makes the classes identical.
    pub separation: f64,
    /// Spread of the per-set location and scale jitter.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            per_class: 60,
            samples: 25,
            separation: 1.5,
            noise: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub sets: Vec<SampleSet>,
    /// Class name per set, aligned with `sets`.
    pub truth: Vec<&'static str>,
}

/// Zero-mean, unit-variance transform of a standard normal: `z` when
/// `s = 0`, otherwise a lognormal shifted and scaled to match.
pub fn warp(z: f64, s: f64) -> f64 {
    if s == 0.0 {
        return z;
    }
    let s2 = s * s;
    let mean = (s2 / 2.0).exp();
    let sd = ((s2.exp() - 1.0) * s2.exp()).sqrt();
    ((s * z).exp() - mean) / sd
}

/// Classes alternate (clean, noisy, clean, …) so neither occupies a
/// contiguous block of ids.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.per_class == 0 || cfg.samples < 2 {
        return Err(Error::input("need at least one set per class and two samples per set"));
    }
    if !(cfg.separation.is_finite() && cfg.noise.is_finite()) || cfg.noise < 0.0 {
        return Err(Error::input("separation must be finite and noise nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = 2 * cfg.per_class;
    let width = total.to_string().len().max(3);
    let mut sets = Vec::with_capacity(total);
    let mut truth = Vec::with_capacity(total);
    for k in 0..total {
        let noisy = k % 2 == 1;
        let mu = cfg.noise * rng.sample::<f64, _>(StandardNormal);
        let sigma = (cfg.noise * rng.sample::<f64, _>(StandardNormal)).exp();
        let s = if noisy { cfg.separation } else { 0.0 };
        let values: Vec<f64> = (0..cfg.samples)
            .map(|_| mu + sigma * warp(StandardNormal.sample(&mut rng), s))
            .collect();
        sets.push(SampleSet::from_scalars(format!("set{k:0width$}"), &values)?);
        truth.push(if noisy { NOISY } else { CLEAN });
    }
    Ok(SynthCorpus { sets, truth })
}
