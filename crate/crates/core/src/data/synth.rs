use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClassDistribution, LabeledDataset};
use crate::error::{Error, Result};

/// Shape of the synthetic benchmark signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub sample_len: usize,
    /// Support width of each raised-cosine bump, in points.
    pub bump_width: f64,
    /// Offset between neighbouring class bump centres, in points.
    pub bump_spacing: f64,
    /// Standard deviation of the additive white Gaussian noise.
    pub noise_scale: f64,
}

/// One raised-cosine bump per class, centred around the middle of the window
/// and shifted by `spacing` between neighbouring classes.
pub fn raised_cosine_prototypes(num_classes: usize, len: usize, width: f64, spacing: f64) -> Vec<Vec<f64>> {
    let mid = (len as f64 - 1.0) / 2.0;
    let half = width / 2.0;
    (0..num_classes)
        .map(|c| {
            let centre = mid + (c as f64 - (num_classes as f64 - 1.0) / 2.0) * spacing;
            (0..len)
                .map(|t| {
                    let d = (t as f64 - centre) / half;
                    if d.abs() < 1.0 {
                        0.5 * (1.0 + (std::f64::consts::PI * d).cos())
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Draw `n` samples: class counts follow `dist` (largest-remainder rounded),
/// each sample is its class prototype plus i.i.d. Gaussian noise.
pub fn synth_generate(
    prototypes: &[Vec<f64>],
    noise_scale: f64,
    n: usize,
    dist: &ClassDistribution,
    seed: u64,
) -> Result<LabeledDataset> {
    if prototypes.len() != dist.num_classes() {
        return Err(Error::param(format!(
            "{} prototypes for {} classes",
            prototypes.len(),
            dist.num_classes()
        )));
    }
    synth_generate_counts(prototypes, noise_scale, &super::largest_remainder(dist.proportions(), n), seed)
}

/// Like [`synth_generate`] with explicit per-class counts.
pub fn synth_generate_counts(prototypes: &[Vec<f64>], noise_scale: f64, counts: &[usize], seed: u64) -> Result<LabeledDataset> {
    if prototypes.len() != counts.len() {
        return Err(Error::param(format!("{} prototypes for {} classes", prototypes.len(), counts.len())));
    }
    let len = prototypes.first().map_or(0, Vec::len);
    if len == 0 || prototypes.iter().any(|p| p.len() != len) {
        return Err(Error::param("prototypes must share a positive length"));
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(Error::param(format!("noise scale must be nonnegative, got {noise_scale}")));
    }
    let n: usize = counts.iter().sum();
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels.shuffle(&mut rng);
    let noise = Normal::new(0.0, noise_scale).map_err(|e| Error::param(e.to_string()))?;
    let mut features = Vec::with_capacity(n * len);
    for &y in &labels {
        for &v in &prototypes[y] {
            let eps = if noise_scale == 0.0 { 0.0 } else { noise.sample(&mut rng) };
            features.push(v + eps);
        }
    }
    LabeledDataset::new(features, labels, len, prototypes.len())
}
