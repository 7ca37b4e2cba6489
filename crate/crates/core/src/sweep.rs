//! Budget, target and teacher-architecture sweeps over finished runs.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{flop_profile, Architecture};
use crate::protocol::{run_experiment, Algorithm, ExperimentConfig, RunHistory};

/// Default Macro-F1 thresholds of the target sweep.
pub const TARGET_THRESHOLDS: [f64; 3] = [0.70, 0.75, 0.80];

/// Default communication budgets, as fractions of the full-run traffic.
pub const BUDGET_FRACTIONS: [f64; 3] = [1.0, 0.6, 0.3];

/// Named teacher architectures, listed from smallest to largest.
pub const TEACHER_PRESETS: [(&str, &str); 3] = [
    ("dense-small", "dense:32 relu dense:5"),
    ("conv-small", "conv1d:8:7:2 relu maxpool:2:2 conv1d:16:5:2 relu flatten dense:5"),
    (
        "conv-large",
        "conv1d:16:7:2 relu maxpool:2:2 conv1d:32:5:2 relu maxpool:2:2 flatten dense:64 relu dense:5",
    ),
];

/// Architecture string for a preset name; anything else is taken as an architecture.
pub fn resolve_teacher(name: &str) -> String {
    TEACHER_PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map_or_else(|| name.to_string(), |(_, a)| a.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    RoundsBudget,
    TargetMacroF1,
    TeacherArch,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rounds-budget" => Ok(SweepAxis::RoundsBudget),
            "target-macro-f1" => Ok(SweepAxis::TargetMacroF1),
            "teacher-arch" => Ok(SweepAxis::TeacherArch),
            _ => Err(Error::config(format!(
                "sweep axis must be rounds-budget, target-macro-f1 or teacher-arch, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::RoundsBudget => "rounds-budget",
            SweepAxis::TargetMacroF1 => "target-macro-f1",
            SweepAxis::TeacherArch => "teacher-arch",
        })
    }
}

/// Largest round whose cumulative traffic fits in `budget_bits`.
pub fn rounds_within_budget(history: &RunHistory, budget_bits: u128) -> usize {
    history
        .records
        .iter()
        .take_while(|r| r.cum_bits() <= budget_bits)
        .last()
        .map_or(0, |r| r.round)
}

/// Budget that is `fraction` of the run's total traffic, rounded down.
pub fn budget_bits(history: &RunHistory, fraction: f64) -> u128 {
    let full = history.final_record().cum_bits();
    (full as f64 * fraction).floor() as u128
}

/// First round whose client-mean Macro-F1 reaches `threshold`.
pub fn first_round_reaching(history: &RunHistory, threshold: f64) -> Option<usize> {
    history
        .records
        .iter()
        .find(|r| r.mean_macro_f1 >= threshold)
        .map(|r| r.round)
}

/// Per-round teacher FLOPs: distillation passes plus one inference pass over the proxy.
pub fn teacher_round_flops(cfg: &ExperimentConfig, arch: &str) -> Result<u128> {
    let layers = arch.parse::<Architecture>()?.resolve(cfg.sample_len)?;
    let f = flop_profile(&layers, cfg.sample_len);
    let dp = (cfg.proxy_size / cfg.num_classes * cfg.num_classes) as u128;
    Ok(cfg.teacher_distill_epochs as u128 * dp * f.train_per_sample as u128 + dp * f.infer_per_sample as u128)
}

/// One (value, algorithm, seed) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub algorithm: String,
    pub seed: u64,
    pub rounds_used: Option<usize>,
    pub cum_bits: Option<u128>,
    pub cum_flops: Option<u128>,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub teacher_round_flops: Option<u128>,
}

/// Seed means of one (value, algorithm) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub value: String,
    pub algorithm: String,
    pub seeds: usize,
    pub reached: usize,
    pub mean_accuracy: Option<f64>,
    pub mean_macro_f1: Option<f64>,
    pub mean_cum_flops: Option<f64>,
    pub teacher_gflops_per_round: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

fn seeded(cfg: &ExperimentConfig, algorithm: Algorithm, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        algorithm,
        seed,
        ..cfg.clone()
    }
}

/// Run every (algorithm, seed) cell, concurrently when `parallel` is set.
pub fn run_cells(cfgs: Vec<ExperimentConfig>, parallel: bool) -> Result<Vec<RunHistory>> {
    if parallel {
        cfgs.par_iter().map(run_experiment).collect()
    } else {
        cfgs.iter().map(run_experiment).collect()
    }
}

fn budget_row(history: &RunHistory, fraction: f64, seed: u64) -> SweepRow {
    let r = rounds_within_budget(history, budget_bits(history, fraction));
    let rec = &history.records[r];
    SweepRow {
        axis: SweepAxis::RoundsBudget.to_string(),
        value: fraction.to_string(),
        algorithm: history.algorithm.to_string(),
        seed,
        rounds_used: Some(r),
        cum_bits: Some(rec.cum_bits()),
        cum_flops: Some(rec.cum_flops),
        accuracy: Some(rec.mean_accuracy),
        macro_f1: Some(rec.mean_macro_f1),
        teacher_round_flops: None,
    }
}

fn target_row(history: &RunHistory, threshold: f64, seed: u64) -> SweepRow {
    let hit = first_round_reaching(history, threshold).map(|r| &history.records[r]);
    SweepRow {
        axis: SweepAxis::TargetMacroF1.to_string(),
        value: threshold.to_string(),
        algorithm: history.algorithm.to_string(),
        seed,
        rounds_used: hit.map(|r| r.round),
        cum_bits: hit.map(|r| r.cum_bits()),
        cum_flops: hit.map(|r| r.cum_flops),
        accuracy: hit.map(|r| r.mean_accuracy),
        macro_f1: hit.map(|r| r.mean_macro_f1),
        teacher_round_flops: None,
    }
}

/// Budget sweep rows from finished full-length runs.
///
/// Nothing in a run depends on the configured round count, so a run capped
/// at `R'` rounds is exactly the length-`R'` prefix of the full run.
pub fn budget_rows(histories: &[(u64, RunHistory)], fractions: &[f64]) -> Vec<SweepRow> {
    fractions
        .iter()
        .flat_map(|&x| histories.iter().map(move |(seed, h)| budget_row(h, x, *seed)))
        .collect()
}

pub fn target_rows(histories: &[(u64, RunHistory)], thresholds: &[f64]) -> Vec<SweepRow> {
    thresholds
        .iter()
        .flat_map(|&t| histories.iter().map(move |(seed, h)| target_row(h, t, *seed)))
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Seed means grouped by (value, algorithm), in first-appearance order.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.value.clone(), r.algorithm.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(value, algorithm)| {
            let cell: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.value == value && r.algorithm == algorithm)
                .collect();
            let reached: Vec<&&SweepRow> = cell.iter().filter(|r| r.macro_f1.is_some()).collect();
            SweepSummary {
                seeds: cell.len(),
                reached: reached.len(),
                mean_accuracy: mean(reached.iter().filter_map(|r| r.accuracy)),
                mean_macro_f1: mean(reached.iter().filter_map(|r| r.macro_f1)),
                mean_cum_flops: mean(reached.iter().filter_map(|r| r.cum_flops.map(|f| f as f64))),
                teacher_gflops_per_round: cell
                    .first()
                    .and_then(|r| r.teacher_round_flops)
                    .map(|f| f as f64 / 1e9),
                value,
                algorithm,
            }
        })
        .collect()
}

/// Run a full sweep.
///
/// Budget and target sweeps run every algorithm in `algorithms` once per seed
/// at the configured round count. The teacher sweep runs BiFedKD once per
/// (architecture, seed).
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    seeds: &[u64],
    algorithms: &[Algorithm],
    parallel: bool,
) -> Result<SweepReport> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::config("a sweep needs at least one value and one seed"));
    }
    let rows = match axis {
        SweepAxis::RoundsBudget | SweepAxis::TargetMacroF1 => {
            let xs = values
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| Error::config(format!("sweep value {v:?} is not a number"))))
                .collect::<Result<Vec<_>>>()?;
            if axis == SweepAxis::RoundsBudget && xs.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::config("budget fractions must lie in [0, 1]"));
            }
            let cells: Vec<(Algorithm, u64)> = algorithms
                .iter()
                .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
                .collect();
            let histories = run_cells(cells.iter().map(|&(a, s)| seeded(cfg, a, s)).collect(), parallel)?;
            let mut rows = Vec::new();
            for &a in algorithms {
                let runs: Vec<(u64, RunHistory)> = cells
                    .iter()
                    .zip(&histories)
                    .filter(|((alg, _), _)| *alg == a)
                    .map(|((_, s), h)| (*s, h.clone()))
                    .collect();
                rows.extend(match axis {
                    SweepAxis::RoundsBudget => budget_rows(&runs, &xs),
                    _ => target_rows(&runs, &xs),
                });
            }
            rows
        }
        SweepAxis::TeacherArch => {
            let mut cfgs = Vec::new();
            let mut meta = Vec::new();
            for v in values {
                let arch = resolve_teacher(v);
                let flops = teacher_round_flops(cfg, &arch)?;
                for &s in seeds {
                    let mut c = seeded(cfg, Algorithm::BiFedKD, s);
                    c.teacher_arch = arch.clone();
                    c.validate()?;
                    cfgs.push(c);
                    meta.push((v.clone(), s, flops));
                }
            }
            let histories = run_cells(cfgs, parallel)?;
            meta.into_iter()
                .zip(histories)
                .map(|((value, seed, flops), h)| {
                    let rec = h.final_record();
                    SweepRow {
                        axis: axis.to_string(),
                        value,
                        algorithm: Algorithm::BiFedKD.to_string(),
                        seed,
                        rounds_used: Some(rec.round),
                        cum_bits: Some(rec.cum_bits()),
                        cum_flops: Some(rec.cum_flops),
                        accuracy: Some(rec.mean_accuracy),
                        macro_f1: Some(rec.mean_macro_f1),
                        teacher_round_flops: Some(flops),
                    }
                })
                .collect()
        }
    };
    Ok(SweepReport {
        axis,
        summary: summarize(&rows),
        rows,
    })
}
