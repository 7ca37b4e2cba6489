//! Confusion matrices, accuracy, Macro-F1, and per-round learning-curve records.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Model;

/// `C × C` counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::shape("confusion matrix must be square"));
        }
        Ok(Self {
            num_classes: c,
            counts: rows.concat(),
        })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::shape("truth and prediction lengths differ"));
        }
        let mut cm = Self::new(num_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::shape(format!("class index outside [0, {num_classes})")));
            }
            cm.record(t, p);
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.num_classes + predicted] += 1;
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|c| self.get(c, c)).sum()
    }

    fn row_sum(&self, c: usize) -> u64 {
        (0..self.num_classes).map(|p| self.get(c, p)).sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        (0..self.num_classes).map(|t| self.get(t, c)).sum()
    }

    /// (precision, recall, F1) per class; undefined ratios are 0.
    pub fn per_class(&self) -> Vec<(f64, f64, f64)> {
        (0..self.num_classes)
            .map(|c| {
                let tp = self.get(c, c) as f64;
                let ratio = |den: u64| if den == 0 { 0.0 } else { tp / den as f64 };
                let precision = ratio(self.col_sum(c));
                let recall = ratio(self.row_sum(c));
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                (precision, recall, f1)
            })
            .collect()
    }
}

/// Predict every test sample (argmax of logits, ties to the lowest class).
pub fn evaluate(model: &Model, test: &LabeledDataset) -> Result<ConfusionMatrix> {
    if model.num_classes() != test.num_classes() {
        return Err(Error::shape(format!(
            "model has {} classes, test set {}",
            model.num_classes(),
            test.num_classes()
        )));
    }
    if model.input_len() != test.sample_len() {
        return Err(Error::shape(format!(
            "model expects {} points, test samples have {}",
            model.input_len(),
            test.sample_len()
        )));
    }
    let mut cm = ConfusionMatrix::new(test.num_classes());
    for (x, &y) in test.iter_samples().zip(test.labels()) {
        let trace = model.trace(x);
        cm.record(y, crate::matrix::argmax(trace.logits()));
    }
    Ok(cm)
}

/// Fraction of correctly classified samples; 0 for an empty matrix.
pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        0.0
    } else {
        cm.trace() as f64 / total as f64
    }
}

/// Unweighted mean of per-class F1 over all classes.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    if cm.num_classes() == 0 {
        return 0.0;
    }
    cm.per_class().iter().map(|&(_, _, f1)| f1).sum::<f64>() / cm.num_classes() as f64
}

/// Evaluation snapshot after one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub client_accuracy: Vec<f64>,
    pub client_macro_f1: Vec<f64>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
    /// System-wide cumulative bits sent from clients to the server.
    pub cum_uplink_bits: u128,
    /// System-wide cumulative bits sent from the server to clients.
    pub cum_downlink_bits: u128,
    /// System-wide cumulative FLOPs spent by all actors.
    pub cum_flops: u128,
}

impl RoundRecord {
    pub fn from_matrices(
        round: usize,
        matrices: &[ConfusionMatrix],
        cum_uplink_bits: u128,
        cum_downlink_bits: u128,
        cum_flops: u128,
    ) -> Self {
        let client_accuracy: Vec<f64> = matrices.iter().map(accuracy).collect();
        let client_macro_f1: Vec<f64> = matrices.iter().map(macro_f1).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        Self {
            round,
            mean_accuracy: mean(&client_accuracy),
            mean_macro_f1: mean(&client_macro_f1),
            client_accuracy,
            client_macro_f1,
            cum_uplink_bits,
            cum_downlink_bits,
            cum_flops,
        }
    }

    pub fn cum_bits(&self) -> u128 {
        self.cum_uplink_bits + self.cum_downlink_bits
    }
}
