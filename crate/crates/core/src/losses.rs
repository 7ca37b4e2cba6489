//! Temperature softening, supervised cross-entropy, KL distillation, and the
//! combined distillation objective.
//!
//! Every loss here is a mean over rows and returns its gradient with respect to
//! the logits already divided by the row count, so the gradient can be handed
//! straight to [`Model::backward`](crate::nn::Model::backward).

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::matrix::LogitMatrix;
use crate::nn::Model;

/// Floor applied to probabilities before taking a logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Allowed deviation of a soft-target row sum from one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Row-stochastic `rows × C` matrix produced by tempered softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTargetMatrix {
    probs: LogitMatrix,
    temperature: f64,
}

impl SoftTargetMatrix {
    /// Wrap an existing probability matrix, checking that every row is a distribution.
    pub fn from_probabilities(probs: LogitMatrix, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        for (i, row) in probs.iter_rows().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::Domain(format!("soft-target row {i} has an entry outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Domain(format!("soft-target row {i} sums to {sum}")));
            }
        }
        Ok(Self { probs, temperature })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn rows(&self) -> usize {
        self.probs.rows()
    }

    pub fn cols(&self) -> usize {
        self.probs.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.probs.row(i)
    }

    pub fn as_matrix(&self) -> &LogitMatrix {
        &self.probs
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            probs: self.probs.select_rows(indices),
            temperature: self.temperature,
        }
    }
}

/// Where the `T²` factor of the distillation objective is attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum T2Placement {
    /// `λ·T²·CE + (1−λ)·KL`
    #[default]
    CrossEntropy,
    /// Classical Hinton placement: `λ·CE + (1−λ)·T²·KL`.
    Kl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub temperature: f64,
    pub lambda: f64,
    pub t2_placement: T2Placement,
}

impl DistillConfig {
    pub fn new(temperature: f64, lambda: f64) -> Result<Self> {
        let cfg = Self {
            temperature,
            lambda,
            t2_placement: T2Placement::CrossEntropy,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::param(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        Ok(())
    }

    /// Weights applied to the (CE, KL) terms.
    pub fn weights(&self) -> (f64, f64) {
        let t2 = self.temperature * self.temperature;
        match self.t2_placement {
            T2Placement::CrossEntropy => (self.lambda * t2, 1.0 - self.lambda),
            T2Placement::Kl => (self.lambda, (1.0 - self.lambda) * t2),
        }
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("temperature must be positive, got {t}")))
    }
}

/// Log-softmax of `z / t`, written into `out`.
fn log_softmax_into(z: &[f64], t: f64, out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max) / t;
        sum += o.exp();
    }
    let lse = sum.ln();
    out.iter_mut().for_each(|o| *o -= lse);
}

/// Softmax of `z / t` for one row.
pub fn softmax_row(z: &[f64], t: f64) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    log_softmax_into(z, t, &mut out);
    out.iter_mut().for_each(|o| *o = o.exp());
    out
}

/// Tempered softmax applied row-wise.
pub fn soften(logits: &LogitMatrix, temperature: f64) -> Result<SoftTargetMatrix> {
    check_temperature(temperature)?;
    let mut probs = LogitMatrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let p = softmax_row(logits.row(i), temperature);
        // normalise the exponentiated row exactly
        let s: f64 = p.iter().sum();
        probs.row_mut(i).iter_mut().zip(&p).for_each(|(d, v)| *d = v / s);
    }
    Ok(SoftTargetMatrix {
        probs,
        temperature,
    })
}

/// Mean cross-entropy of `softmax(logits)` against integer labels.
pub fn cross_entropy(logits: &LogitMatrix, labels: &[usize]) -> Result<(f64, LogitMatrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::shape(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::Domain("cross-entropy over an empty set".into()));
    }
    let n = logits.rows() as f64;
    let c = logits.cols();
    let mut grad = LogitMatrix::zeros(logits.rows(), c);
    let mut total = 0.0;
    let mut logp = vec![0.0; c];
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Validation {
                row: i + 1,
                message: format!("label {y} outside [0, {c})"),
            });
        }
        log_softmax_into(logits.row(i), 1.0, &mut logp);
        total -= logp[y];
        let g = grad.row_mut(i);
        for (gc, lp) in g.iter_mut().zip(&logp) {
            *gc = lp.exp() / n;
        }
        g[y] -= 1.0 / n;
    }
    Ok((total / n, grad))
}

/// Mean over rows of `KL(target ‖ softmax(logits / T))` and its logit gradient.
pub fn kl_divergence(logits: &LogitMatrix, targets: &SoftTargetMatrix, temperature: f64) -> Result<(f64, LogitMatrix)> {
    check_temperature(temperature)?;
    if logits.dims() != (targets.rows(), targets.cols()) {
        return Err(Error::shape(format!(
            "logits are {}x{}, targets {}x{}",
            logits.rows(),
            logits.cols(),
            targets.rows(),
            targets.cols()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::Domain("KL divergence over an empty set".into()));
    }
    let n = logits.rows() as f64;
    let mut grad = LogitMatrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    let mut logp = vec![0.0; logits.cols()];
    for i in 0..logits.rows() {
        log_softmax_into(logits.row(i), temperature, &mut logp);
        let q = targets.row(i);
        for (&qc, &lp) in q.iter().zip(&logp) {
            if qc > 0.0 {
                total += qc * (qc.max(LOG_FLOOR).ln() - lp);
            }
        }
        for ((g, &qc), &lp) in grad.row_mut(i).iter_mut().zip(q).zip(&logp) {
            *g = (lp.exp() - qc) / (temperature * n);
        }
    }
    Ok((total / n, grad))
}

/// Logit-level distillation objective `w_ce·CE(labels) + w_kl·KL(targets)`.
pub fn distillation_loss(
    logits: &LogitMatrix,
    labels: &[usize],
    targets: &SoftTargetMatrix,
    cfg: &DistillConfig,
) -> Result<(f64, LogitMatrix)> {
    cfg.validate()?;
    let (w_ce, w_kl) = cfg.weights();
    let (ce, mut grad) = cross_entropy(logits, labels)?;
    let (kl, kl_grad) = kl_divergence(logits, targets, cfg.temperature)?;
    for (g, k) in grad.as_mut_slice().iter_mut().zip(kl_grad.as_slice()) {
        *g = w_ce * *g + w_kl * k;
    }
    Ok((w_ce * ce + w_kl * kl, grad))
}

fn dataset_logits(model: &Model, data: &LabeledDataset) -> Result<LogitMatrix> {
    let rows: Vec<&[f64]> = data.iter_samples().collect();
    model.forward(&rows)
}

/// Mean supervised cross-entropy of `model` on `data`, with the parameter gradient.
pub fn ce_objective(model: &Model, data: &LabeledDataset) -> Result<(f64, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Domain("supervised objective over an empty dataset".into()));
    }
    let logits = dataset_logits(model, data)?;
    let (loss, grad) = cross_entropy(&logits, data.labels())?;
    let rows: Vec<&[f64]> = data.iter_samples().collect();
    Ok((loss, model.backward(&rows, &grad)?))
}

/// Mean KL distillation term for precomputed logits (gradient at the logits).
pub fn kl_term(model_logits: &LogitMatrix, targets: &SoftTargetMatrix, temperature: f64) -> Result<(f64, LogitMatrix)> {
    kl_divergence(model_logits, targets, temperature)
}

/// Combined teacher objective on the labeled proxy set and its parameter gradient.
pub fn teacher_objective(
    model: &Model,
    proxy: &LabeledDataset,
    targets: &SoftTargetMatrix,
    cfg: &DistillConfig,
) -> Result<(f64, Vec<f64>)> {
    if targets.rows() != proxy.len() {
        return Err(Error::shape(format!(
            "{} target rows for {} proxy samples",
            targets.rows(),
            proxy.len()
        )));
    }
    let logits = dataset_logits(model, proxy)?;
    let (loss, grad) = distillation_loss(&logits, proxy.labels(), targets, cfg)?;
    let rows: Vec<&[f64]> = proxy.iter_samples().collect();
    Ok((loss, model.backward(&rows, &grad)?))
}
