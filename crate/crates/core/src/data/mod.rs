//! Labeled datasets, class distributions, and the construction of private
//! client splits, the balanced proxy set, and the held-out test set.

mod ingest;
mod partition;
mod synth;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use ingest::{load_csv, save_csv};
pub use partition::{
    build_proxy, build_proxy_indices, largest_remainder, partition, partition_indices, PartitionMode, PartitionPlan,
};
pub use synth::{raised_cosine_prototypes, synth_generate, synth_generate_counts, SynthParams};

/// AAMI heartbeat classes in label order.
pub const AAMI_CLASSES: [&str; 5] = ["N", "S", "V", "F", "Q"];

/// Per-client label percentages (N, S, V, F, Q) of the three reference clients.
pub const REFERENCE_PERCENTAGES: [[f64; 5]; 3] = [
    [31.96, 14.46, 43.92, 8.19, 1.47],
    [48.53, 3.82, 36.64, 10.59, 0.42],
    [29.40, 33.45, 32.43, 4.72, 0.0],
];

/// Private dataset sizes used for the three reference clients (each in the
/// 3,000–4,000 range).
pub const REFERENCE_CLIENT_SIZES: [usize; 3] = [3400, 3600, 3500];

/// Fixed-length real signals with integer labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    sample_len: usize,
    num_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    class_counts: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, sample_len: usize, num_classes: usize) -> Result<Self> {
        if sample_len == 0 || num_classes == 0 {
            return Err(Error::param("sample length and class count must be positive"));
        }
        if features.len() != labels.len() * sample_len {
            return Err(Error::shape(format!(
                "{} feature values for {} samples of length {sample_len}",
                features.len(),
                labels.len()
            )));
        }
        let mut class_counts = vec![0; num_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::Validation {
                    row: i + 1,
                    message: format!("label {y} outside [0, {num_classes})"),
                });
            }
            class_counts[y] += 1;
        }
        Ok(Self {
            sample_len,
            num_classes,
            features,
            labels,
            class_counts,
        })
    }

    pub fn empty(sample_len: usize, num_classes: usize) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), sample_len, num_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.sample_len
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.sample_len..(i + 1) * self.sample_len]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn iter_samples(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.sample_len)
    }

    /// Realised class proportions; all zero for an empty dataset.
    pub fn proportions(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        self.class_counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Copy of the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.sample_len);
        let mut labels = Vec::with_capacity(indices.len());
        let mut class_counts = vec![0; self.num_classes];
        for &i in indices {
            features.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
            class_counts[self.labels[i]] += 1;
        }
        Self {
            sample_len: self.sample_len,
            num_classes: self.num_classes,
            features,
            labels,
            class_counts,
        }
    }

    /// Indices of every sample of each class, in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        by_class
    }

    /// Stable digest of the dataset contents (labels and feature bit patterns).
    pub fn content_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.sample_len as u64).to_le_bytes());
        h.update((self.num_classes as u64).to_le_bytes());
        for &y in &self.labels {
            h.update((y as u64).to_le_bytes());
        }
        for &v in &self.features {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().into()
    }

    /// Content digest folded into a 64-bit seed.
    pub fn content_seed(&self) -> u64 {
        let d = self.content_digest();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// Class proportions for a dataset of `total` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    proportions: Vec<f64>,
    total: usize,
}

impl ClassDistribution {
    pub fn new(proportions: Vec<f64>, total: usize) -> Result<Self> {
        if proportions.is_empty() {
            return Err(Error::param("class distribution needs at least one class"));
        }
        if proportions.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
            return Err(Error::param("class proportions must be finite and nonnegative"));
        }
        let sum: f64 = proportions.iter().sum();
        if sum == 0.0 {
            return Err(Error::param("class proportions are all zero"));
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("class proportions sum to {sum}, not 1")));
        }
        Ok(Self { proportions, total })
    }

    /// Build from percentages (or any nonnegative weights), normalising them to sum to one.
    pub fn from_weights(weights: &[f64], total: usize) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::param("class weights must be finite and nonnegative"));
        }
        if sum <= 0.0 {
            return Err(Error::param("class weights are all zero"));
        }
        Self::new(weights.iter().map(|w| w / sum).collect(), total)
    }

    pub fn uniform(num_classes: usize, total: usize) -> Result<Self> {
        Self::from_weights(&vec![1.0; num_classes], total)
    }

    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn num_classes(&self) -> usize {
        self.proportions.len()
    }

    /// Per-class sample counts summing to `total` (largest-remainder rounding).
    pub fn counts(&self) -> Vec<usize> {
        largest_remainder(&self.proportions, self.total)
    }
}

/// Largest class count over smallest, or `None` when some class is absent.
pub fn imbalance_ratio(d: &LabeledDataset) -> Option<f64> {
    let counts = d.class_counts();
    let min = *counts.iter().min()?;
    if min == 0 {
        return None;
    }
    let max = *counts.iter().max()?;
    Some(max as f64 / min as f64)
}
