#![allow(dead_code)]

pub mod gradcheck;

use fedkd::protocol::{ExperimentConfig, PartitionSpec};

pub const TINY_STUDENT: &str = "conv1d:4:5:2 relu maxpool:2:2 flatten dense:5";
pub const TINY_TEACHER: &str = "conv1d:6:5:2 relu maxpool:2:2 flatten dense:16 relu dense:5";

/// Small but complete experiment: three reference-mixture clients, short
/// signals, few epochs. Runs in well under a second.
pub fn tiny_config() -> ExperimentConfig {
    ExperimentConfig {
        rounds: 3,
        teacher_pretrain_epochs: 2,
        sample_len: 32,
        bump_width: 12.0,
        bump_spacing: 2.0,
        proxy_size: 50,
        test_per_class: 8,
        client_sizes: vec![120, 150, 130],
        batch_size: 16,
        student_lr: 5e-3,
        teacher_lr: 5e-3,
        student_arch: TINY_STUDENT.into(),
        teacher_arch: TINY_TEACHER.into(),
        ..ExperimentConfig::default()
    }
}

/// Tiny configuration with explicit per-client class weights.
pub fn tiny_custom(weights: Vec<Vec<f64>>, sizes: Vec<usize>) -> ExperimentConfig {
    ExperimentConfig {
        partition: PartitionSpec::Custom,
        client_weights: weights,
        client_sizes: sizes,
        ..tiny_config()
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
