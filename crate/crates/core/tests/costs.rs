//! Measured ledger totals against hand-counted FLOP and bit totals.
//!
//! Oracle per-sample FLOPs at 32-point inputs, counted layer by layer
//! (2 per multiply-add, 1 per bias, 1 per ReLU or pool output):
//!
//! student `conv1d:4:5:2 relu maxpool:2:2 flatten dense:5`
//!   conv 14·4·11 = 616, relu 56, pool 28, dense 2·28·5+5 = 285 → 985
//! teacher `conv1d:6:5:2 relu maxpool:2:2 flatten dense:16 relu dense:5`
//!   conv 14·6·11 = 924, relu 84, pool 42, dense 1360, relu 16, dense 165 → 2591
//!
//! Training counts three times inference. The student has 24 + 145 = 169 parameters.

mod common;

use common::{tiny_config, tiny_custom};
use fedkd::cost::{compute_total, measured_vs_analytic, CostTerm};
use fedkd::protocol::{cost_inputs, run_experiment, Algorithm, ExperimentConfig};

const STUDENT_INFER: u128 = 985;
const STUDENT_TRAIN: u128 = 3 * STUDENT_INFER;
const TEACHER_INFER: u128 = 2591;
const TEACHER_TRAIN: u128 = 3 * TEACHER_INFER;
const STUDENT_PARAMS: u128 = 169;

struct Expected {
    flops: u128,
    bits_per_round: u128,
}

fn check(cfg: &ExperimentConfig, expected: Expected) {
    let inputs = cost_inputs(cfg).unwrap();
    assert_eq!(compute_total(&inputs).unwrap().total, expected.flops, "analytic FLOPs");

    let h = run_experiment(cfg).unwrap();
    let r = cfg.rounds as u128;
    assert_eq!(h.ledger.flops(), expected.flops, "measured FLOPs");
    assert_eq!(h.ledger.uplink_bits() + h.ledger.downlink_bits(), r * expected.bits_per_round);
    assert_eq!(h.ledger.uplink_bits(), h.ledger.downlink_bits());
    let report = measured_vs_analytic(&h.ledger, &inputs).unwrap();
    assert!(report.is_exact(), "{:?}", report.checks);
    report.verify().unwrap();

    let last = h.final_record();
    assert_eq!(last.cum_flops, expected.flops);
    for rec in &h.records {
        assert_eq!(rec.cum_bits(), rec.round as u128 * expected.bits_per_round);
    }
}

#[test]
fn bifedkd_reference_mixture() {
    // three clients holding 400 samples, proxy 50, R = 3, E_s = 2
    let per_round = 3 * 50 * STUDENT_INFER
        + 3 * 50 * STUDENT_TRAIN
        + 400 * STUDENT_TRAIN
        + 50 * TEACHER_TRAIN
        + 50 * TEACHER_INFER
        + 3 * 50 * 5;
    assert_eq!(per_round, 2_291_950);
    let flops = 400 * STUDENT_TRAIN + 2 * 50 * TEACHER_TRAIN + 3 * per_round;
    check(
        &tiny_config(),
        Expected {
            flops,
            bits_per_round: 3 * 2 * 32 * 50 * 5,
        },
    );
}

#[test]
fn fedmd_has_no_teacher_terms() {
    let cfg = ExperimentConfig {
        algorithm: Algorithm::FedMD,
        ..tiny_config()
    };
    let per_round = 3 * 50 * STUDENT_INFER + 3 * 50 * STUDENT_TRAIN + 400 * STUDENT_TRAIN + 3 * 50 * 5;
    check(
        &cfg,
        Expected {
            flops: 400 * STUDENT_TRAIN + 3 * per_round,
            bits_per_round: 48_000,
        },
    );
    let h = run_experiment(&cfg).unwrap();
    for term in [CostTerm::TeacherPretrain, CostTerm::ServerTrain, CostTerm::ServerInfer] {
        assert_eq!(h.ledger.term(term), 0, "{}", term.name());
    }
}

#[test]
fn disabled_teacher_matches_fedmd_costs() {
    let off = ExperimentConfig {
        teacher_stage: false,
        ..tiny_config()
    };
    let fedmd = ExperimentConfig {
        algorithm: Algorithm::FedMD,
        ..tiny_config()
    };
    assert_eq!(run_experiment(&off).unwrap().ledger, run_experiment(&fedmd).unwrap().ledger);
}

#[test]
fn fedavg_exchanges_parameters() {
    let cfg = ExperimentConfig {
        algorithm: Algorithm::FedAvg,
        ..tiny_config()
    };
    let per_round = 400 * STUDENT_TRAIN + 3 * STUDENT_PARAMS;
    check(
        &cfg,
        Expected {
            flops: 400 * STUDENT_TRAIN + 3 * per_round,
            bits_per_round: 3 * 2 * 32 * STUDENT_PARAMS,
        },
    );
}

#[test]
fn single_client_half_precision() {
    let cfg = ExperimentConfig {
        rounds: 2,
        payload_bits: 16,
        ..tiny_custom(vec![vec![1.0; 5]], vec![100])
    };
    let per_round =
        50 * STUDENT_INFER + 50 * STUDENT_TRAIN + 100 * STUDENT_TRAIN + 50 * TEACHER_TRAIN + 50 * TEACHER_INFER + 50 * 5;
    check(
        &cfg,
        Expected {
            flops: 100 * STUDENT_TRAIN + 2 * 50 * TEACHER_TRAIN + 2 * per_round,
            bits_per_round: 2 * 16 * 50 * 5,
        },
    );
}

#[test]
fn zero_rounds_double_precision() {
    let cfg = ExperimentConfig {
        rounds: 0,
        payload_bits: 64,
        ..tiny_config()
    };
    check(
        &cfg,
        Expected {
            flops: 400 * STUDENT_TRAIN + 2 * 50 * TEACHER_TRAIN,
            bits_per_round: 3 * 2 * 64 * 50 * 5,
        },
    );
}

#[test]
fn ablations_drop_their_terms() {
    let cfg = ExperimentConfig {
        skip_realign: true,
        skip_student_distill: true,
        ..tiny_config()
    };
    let per_round = 3 * 50 * STUDENT_INFER + 50 * TEACHER_TRAIN + 50 * TEACHER_INFER + 3 * 50 * 5;
    check(
        &cfg,
        Expected {
            flops: 400 * STUDENT_TRAIN + 2 * 50 * TEACHER_TRAIN + 3 * per_round,
            bits_per_round: 48_000,
        },
    );
}

#[test]
fn ragged_proxy_rounds_down_to_class_multiple() {
    // 53 requested proxy samples yield 10 per class
    let cfg = ExperimentConfig {
        proxy_size: 53,
        rounds: 1,
        ..tiny_config()
    };
    let per_round = 3 * 50 * STUDENT_INFER
        + 3 * 50 * STUDENT_TRAIN
        + 400 * STUDENT_TRAIN
        + 50 * TEACHER_TRAIN
        + 50 * TEACHER_INFER
        + 3 * 50 * 5;
    check(
        &cfg,
        Expected {
            flops: 400 * STUDENT_TRAIN + 2 * 50 * TEACHER_TRAIN + per_round,
            bits_per_round: 48_000,
        },
    );
}

#[test]
fn per_client_ledgers_split_evenly() {
    let h = run_experiment(&tiny_config()).unwrap();
    for c in h.ledger.clients() {
        assert_eq!(c.uplink_bits, 3 * 32 * 50 * 5);
        assert_eq!(c.downlink_bits, 3 * 32 * 50 * 5);
        assert_eq!(c.aggregation_flops, 0);
    }
    assert_eq!(h.ledger.server().uplink_bits, 0);
    assert_eq!(h.ledger.server().aggregation_flops, 3 * 3 * 50 * 5);
}
