mod common;

use common::{max_abs_diff, tiny_config, tiny_custom, TINY_STUDENT, TINY_TEACHER};
use fedkd::data::LabeledDataset;
use fedkd::losses::{cross_entropy, soften, DistillConfig};
use fedkd::metrics::{accuracy, evaluate};
use fedkd::nn::{AdamState, Architecture, Model};
use fedkd::payload::{Payload, ScalarWidth};
use fedkd::protocol::{
    aggregate_logits, client_distill_and_realign, client_infer_logits, derive_seed, make_global_targets,
    pretrain_students, pretrain_teacher, run, run_experiment, server_distill_teacher, train_epoch, Algorithm,
    ClientState, DataBundle, ExperimentConfig, RngKeying, ServerState,
};
use fedkd::Error;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn layers(arch: &str, len: usize) -> Vec<fedkd::nn::LayerSpec> {
    arch.parse::<Architecture>().unwrap().resolve(len).unwrap()
}

fn bundle(cfg: &ExperimentConfig) -> DataBundle {
    DataBundle::build(cfg).unwrap()
}

fn client(id: usize, data: &LabeledDataset, lr: f64, seed: u64) -> ClientState {
    ClientState::new(id, layers(TINY_STUDENT, data.sample_len()), data.clone(), lr, seed, RngKeying::ClientId).unwrap()
}

fn server(proxy: &LabeledDataset, lr: f64, seed: u64) -> ServerState {
    ServerState::new(layers(TINY_TEACHER, proxy.sample_len()), proxy.clone(), lr, seed).unwrap()
}

#[test]
fn disabled_teacher_reduces_to_fedmd() {
    let mut cfg = tiny_config();
    cfg.rounds = 5;
    cfg.keep_artifacts = true;
    let data = bundle(&cfg);
    let fedmd = run(
        &ExperimentConfig {
            algorithm: Algorithm::FedMD,
            ..cfg.clone()
        },
        &data,
    )
    .unwrap();
    cfg.teacher_stage = false;
    let reduced = run(&cfg, &data).unwrap();
    assert_eq!(reduced.records, fedmd.records);
    assert_eq!(reduced.ledger, fedmd.ledger);
    assert_eq!(reduced.client_params, fedmd.client_params);
    assert_eq!(reduced.artifacts, fedmd.artifacts);
}

#[test]
fn without_teacher_global_targets_are_softened_aggregate() {
    let cfg = ExperimentConfig {
        algorithm: Algorithm::FedMD,
        keep_artifacts: true,
        ..tiny_config()
    };
    let h = run_experiment(&cfg).unwrap();
    for a in &h.artifacts {
        assert_eq!(a.global, a.intermediate);
        assert_eq!(a.intermediate, soften(&a.aggregate, cfg.temperature).unwrap());
    }
}

#[test]
fn runs_are_seed_deterministic() {
    for algorithm in Algorithm::ALL {
        let cfg = ExperimentConfig {
            algorithm,
            ..tiny_config()
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        let c = run_experiment(&ExperimentConfig {
            parallel_clients: true,
            ..cfg.clone()
        })
        .unwrap();
        assert_eq!(a, b, "{algorithm}");
        assert_eq!(a, c, "{algorithm} parallel");
        let other = run_experiment(&ExperimentConfig { seed: 99, ..cfg }).unwrap();
        assert_ne!(a.records, other.records, "{algorithm} seed sensitivity");
    }
}

#[test]
fn content_keyed_streams_make_server_state_permutation_invariant() {
    let cfg = ExperimentConfig {
        rng_keying: RngKeying::Content,
        keep_artifacts: true,
        ..tiny_config()
    };
    let data = bundle(&cfg);
    let perm = [2, 0, 1];
    let mut shuffled = data.clone();
    shuffled.clients = perm.iter().map(|&k| data.clients[k].clone()).collect();
    let shuffled_cfg = ExperimentConfig {
        client_sizes: perm.iter().map(|&k| cfg.client_sizes[k]).collect(),
        ..cfg.clone()
    };
    let a = run(&cfg, &data).unwrap();
    let b = run(&shuffled_cfg, &shuffled).unwrap();
    assert_eq!(a.teacher_params, b.teacher_params);
    for (x, y) in a.artifacts.iter().zip(&b.artifacts) {
        assert_eq!(x.aggregate, y.aggregate);
        assert_eq!(x.intermediate, y.intermediate);
        assert_eq!(x.global, y.global);
        for (j, &k) in perm.iter().enumerate() {
            assert_eq!(x.uploads[k], y.uploads[j]);
        }
    }
    for (j, &k) in perm.iter().enumerate() {
        assert_eq!(a.client_params[k], b.client_params[j]);
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.client_macro_f1[k], rb.client_macro_f1[j]);
        }
    }
}

#[test]
fn id_keyed_pretraining_ignores_client_order() {
    let cfg = tiny_config();
    let data = bundle(&cfg);
    let mut clients: Vec<ClientState> = data.clients.iter().enumerate().map(|(k, d)| client(k, d, 1e-2, 3)).collect();
    let mut reordered: Vec<ClientState> = clients.iter().rev().cloned().collect();
    pretrain_students(&mut clients, 2, 16, false).unwrap();
    pretrain_students(&mut reordered, 2, 16, false).unwrap();
    for c in &clients {
        let twin = reordered.iter().find(|r| r.id == c.id).unwrap();
        assert_eq!(c.student.params(), twin.student.params());
    }
}

#[test]
fn zero_rounds_records_only_the_pretraining_evaluation() {
    for algorithm in Algorithm::ALL {
        let h = run_experiment(&ExperimentConfig {
            algorithm,
            rounds: 0,
            ..tiny_config()
        })
        .unwrap();
        assert_eq!(h.records.len(), 1);
        assert_eq!(h.records[0].round, 0);
        assert_eq!(h.ledger.uplink_bits() + h.ledger.downlink_bits(), 0);
    }
}

#[test]
fn single_client_aggregate_is_its_upload() {
    let cfg = ExperimentConfig {
        keep_artifacts: true,
        ..tiny_custom(vec![vec![1.0; 5]], vec![100])
    };
    let h = run_experiment(&cfg).unwrap();
    assert_eq!(h.records[0].client_accuracy.len(), 1);
    for a in &h.artifacts {
        assert_eq!(a.uploads.len(), 1);
        assert_eq!(a.aggregate, a.uploads[0]);
    }
}

#[test]
fn every_exchanged_matrix_has_proxy_shape() {
    let cfg = ExperimentConfig {
        keep_artifacts: true,
        ..tiny_config()
    };
    let h = run_experiment(&cfg).unwrap();
    let dims = (cfg.proxy_size / 5 * 5, 5);
    for a in &h.artifacts {
        assert!(a.uploads.iter().all(|u| u.dims() == dims));
        assert_eq!(a.aggregate.dims(), dims);
        assert_eq!((a.global.rows(), a.global.cols()), dims);
        for i in 0..a.global.rows() {
            assert!((a.global.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert!((a.intermediate.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        // conservation: the aggregate cell is the mean of the uploaded cells
        for (j, &v) in a.aggregate.as_slice().iter().enumerate() {
            let mean = a.uploads.iter().map(|u| u.as_slice()[j]).sum::<f64>() / a.uploads.len() as f64;
            assert!((v - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        }
    }
}

#[test]
fn fedavg_clients_share_parameters_after_each_round() {
    let h = run_experiment(&ExperimentConfig {
        algorithm: Algorithm::FedAvg,
        ..tiny_config()
    })
    .unwrap();
    assert!(h.client_params.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn fedavg_on_identical_clients_matches_each_client() {
    let mut cfg = tiny_custom(vec![vec![1.0; 5]; 2], vec![80, 80]);
    cfg.algorithm = Algorithm::FedAvg;
    cfg.payload_bits = 64;
    cfg.rounds = 1;
    let mut data = bundle(&cfg);
    data.clients[1] = data.clients[0].clone();
    // content keying gives both clients the same shuffling stream
    cfg.rng_keying = RngKeying::Content;
    let h = run(&cfg, &data).unwrap();
    let single = run(
        &ExperimentConfig {
            client_sizes: vec![80],
            client_weights: vec![vec![1.0; 5]],
            ..cfg.clone()
        },
        &DataBundle::new(vec![data.clients[0].clone()], data.proxy.clone(), data.test.clone()).unwrap(),
    )
    .unwrap();
    assert_eq!(h.client_params[0], single.client_params[0]);
    assert_eq!(h.client_params[1], single.client_params[0]);
}

#[test]
fn single_client_fedavg_is_local_training() {
    let mut cfg = tiny_custom(vec![vec![1.0; 5]], vec![90]);
    cfg.algorithm = Algorithm::FedAvg;
    cfg.payload_bits = 64;
    let data = bundle(&cfg);
    let h = run(&cfg, &data).unwrap();

    let mut init = Model::new(layers(TINY_STUDENT, cfg.sample_len), cfg.sample_len, 5).unwrap();
    init.init_glorot(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "fedavg-init", 0)));
    let mut c = ClientState::from_model(0, 0, init, data.clients[0].clone(), cfg.student_lr, cfg.seed);
    let epochs = cfg.student_pretrain_epochs + cfg.rounds * cfg.student_local_epochs;
    pretrain_students(std::slice::from_mut(&mut c), epochs, cfg.batch_size, false).unwrap();
    assert_eq!(h.client_params[0], c.student.params());
}

#[test]
fn fedavg_rejects_mixed_architectures() {
    let cfg = ExperimentConfig {
        algorithm: Algorithm::FedAvg,
        client_archs: vec![TINY_STUDENT.into(), TINY_STUDENT.into(), "dense:5".into()],
        ..tiny_config()
    };
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    // heterogeneous students are fine when only logits cross the wire
    let ok = ExperimentConfig {
        algorithm: Algorithm::BiFedKD,
        ..cfg
    };
    assert!(run_experiment(&ok).is_ok());
}

#[test]
fn divergence_reports_round_and_phase() {
    let cfg = ExperimentConfig {
        student_lr: 1e300,
        teacher_lr: 1e300,
        student_pretrain_epochs: 0,
        teacher_pretrain_epochs: 0,
        ..tiny_config()
    };
    match run_experiment(&cfg) {
        Err(Error::Round { round, phase, .. }) => {
            assert!(round >= 1 && !phase.is_empty(), "round {round} phase {phase}");
        }
        other => panic!("expected a round error, got {other:?}"),
    }
}

#[test]
fn teacher_pretraining_separates_clean_proxy() {
    let cfg = ExperimentConfig {
        noise_scale: 0.05,
        proxy_size: 100,
        ..tiny_config()
    };
    let data = bundle(&cfg);
    let mut s = server(&data.proxy, 5e-3, 1);
    let before = s.teacher.params().to_vec();
    assert_eq!(pretrain_teacher(&mut s, 0, 16).unwrap(), 0);
    assert_eq!(s.teacher.params(), &before[..]);
    pretrain_teacher(&mut s, 50, 16).unwrap();
    let acc = accuracy(&evaluate(&s.teacher, &data.proxy).unwrap());
    assert!(acc > 0.95, "training accuracy {acc}");
}

/// Fixed-point checks take one full-batch step from fresh optimizer moments.
/// At the fixed point the gradient is pure rounding noise (~1e-17); further
/// Adam steps normalise that noise against ε and walk away from the point.
const FULL_BATCH: usize = 1 << 20;

#[test]
fn teacher_self_distillation_is_a_fixed_point() {
    let data = bundle(&tiny_config());
    let mut s = server(&data.proxy, 1e-3, 2);
    pretrain_teacher(&mut s, 2, 16).unwrap();
    s.adam = AdamState::new(s.teacher.param_count(), 1e-3);
    let before = s.teacher.params().to_vec();
    let own = make_global_targets(&s, 3.0).unwrap();
    let cfg = DistillConfig::new(3.0, 0.0).unwrap();
    server_distill_teacher(&mut s, &own, &cfg, 1, FULL_BATCH).unwrap();
    let moved = max_abs_diff(&before, s.teacher.params());
    assert!(moved < 1e-8, "moved {moved:e}");
}

#[test]
fn student_self_distillation_is_a_fixed_point() {
    let data = bundle(&tiny_config());
    let mut c = client(0, &data.clients[0], 1e-3, 4);
    pretrain_students(std::slice::from_mut(&mut c), 1, 16, false).unwrap();
    c.adam = AdamState::new(c.student.param_count(), 1e-3);
    let before = c.student.params().to_vec();
    let own = soften(&client_infer_logits(&c, &data.proxy).unwrap(), 3.0).unwrap();
    let cfg = DistillConfig::new(3.0, 0.0).unwrap();
    client_distill_and_realign(&mut c, &own, &data.proxy, &cfg, 1, 0, FULL_BATCH).unwrap();
    let moved = max_abs_diff(&before, c.student.params());
    assert!(moved < 1e-8, "moved {moved:e}");
}

#[test]
fn single_client_fedmd_targets_are_a_fixed_point() {
    let data = bundle(&tiny_custom(vec![vec![1.0; 5]], vec![100]));
    let mut c = client(0, &data.clients[0], 1e-3, 5);
    let before = c.student.params().to_vec();
    let z = client_infer_logits(&c, &data.proxy).unwrap();
    let uploaded = Payload::encode_matrix(&z, ScalarWidth::B64)
        .decode_matrix(z.rows(), z.cols())
        .unwrap();
    let q = soften(&aggregate_logits(&[uploaded]).unwrap(), 3.0).unwrap();
    let cfg = DistillConfig::new(3.0, 0.0).unwrap();
    client_distill_and_realign(&mut c, &q, &data.proxy, &cfg, 1, 0, FULL_BATCH).unwrap();
    let moved = max_abs_diff(&before, c.student.params());
    assert!(moved < 1e-8, "moved {moved:e}");
}

#[test]
fn skipping_both_client_phases_leaves_client_unchanged() {
    let data = bundle(&tiny_config());
    let mut c = client(1, &data.clients[1], 1e-2, 6);
    let before = c.student.params().to_vec();
    let q = soften(&client_infer_logits(&c, &data.proxy).unwrap(), 2.0).unwrap();
    let u = client_distill_and_realign(&mut c, &q, &data.proxy, &DistillConfig::new(2.0, 0.3).unwrap(), 0, 0, 16).unwrap();
    assert_eq!((u.distilled, u.realigned), (0, 0));
    assert_eq!(c.student.params(), &before[..]);
}

#[test]
fn realignment_descends_on_first_mini_batch() {
    let data = bundle(&tiny_config());
    for seed in 0..5 {
        let mut c = client(0, &data.clients[0], 1e-4, seed);
        let mut order: Vec<usize> = (0..c.data.len()).collect();
        order.shuffle(&mut c.rng.clone());
        let first = c.data.subset(&order[..16]);
        let ce = |m: &Model| {
            let rows: Vec<&[f64]> = first.iter_samples().collect();
            cross_entropy(&m.forward(&rows).unwrap(), first.labels()).unwrap().0
        };
        let before = ce(&c.student);
        let ClientState {
            student, adam, rng, ..
        } = &mut c;
        train_epoch(student, adam, &first, 16, rng, |logits, idx| {
            let labels: Vec<usize> = idx.iter().map(|&i| first.label(i)).collect();
            Ok(cross_entropy(logits, &labels)?.1)
        })
        .unwrap();
        let after = ce(&c.student);
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn hard_label_distillation_matches_rescaled_adam_ce() {
    // With λ = 1 the objective is T²·CE. Adam is invariant to gradient scale
    // except through ε, so the trajectory equals plain CE training with ε / T².
    let t: f64 = 3.0;
    let data = bundle(&tiny_config());
    let mut distilled = server(&data.proxy, 1e-3, 8);
    let mut reference = distilled.clone();
    reference.adam = AdamState::with_hyper(reference.teacher.param_count(), 1e-3, 0.9, 0.999, 1e-8 / (t * t));
    let targets = soften(&client_infer_logits(&client(0, &data.clients[0], 1e-3, 1), &data.proxy).unwrap(), t).unwrap();
    server_distill_teacher(&mut distilled, &targets, &DistillConfig::new(t, 1.0).unwrap(), 2, 16).unwrap();
    pretrain_teacher(&mut reference, 2, 16).unwrap();
    let diff = max_abs_diff(distilled.teacher.params(), reference.teacher.params());
    assert!(diff < 1e-12, "trajectories differ by {diff:e}");
}

#[test]
fn zero_epoch_teacher_distillation_is_a_no_op() {
    let data = bundle(&tiny_config());
    let mut s = server(&data.proxy, 1e-3, 9);
    let before = s.teacher.params().to_vec();
    let q = make_global_targets(&s, 3.0).unwrap();
    assert_eq!(server_distill_teacher(&mut s, &q, &DistillConfig::new(3.0, 0.3).unwrap(), 0, 16).unwrap(), 0);
    assert_eq!(s.teacher.params(), &before[..]);
}

#[test]
fn misaligned_teacher_targets_are_shape_errors() {
    let data = bundle(&tiny_config());
    let mut s = server(&data.proxy, 1e-3, 9);
    let short = soften(&fedkd::LogitMatrix::zeros(3, 5), 3.0).unwrap();
    assert!(matches!(
        server_distill_teacher(&mut s, &short, &DistillConfig::new(3.0, 0.3).unwrap(), 1, 16),
        Err(Error::Shape(_))
    ));
}

#[test]
fn global_targets_properties() {
    let data = bundle(&tiny_config());
    let mut s = server(&data.proxy, 1e-3, 10);
    pretrain_teacher(&mut s, 1, 16).unwrap();
    let q = make_global_targets(&s, 3.0).unwrap();
    let rows: Vec<&[f64]> = data.proxy.iter_samples().collect();
    let raw = s.teacher.forward(&rows).unwrap();
    assert_eq!(q.as_matrix().argmax_rows(), raw.argmax_rows());
    for i in 0..q.rows() {
        assert!((q.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
    let n = s.teacher.param_count();
    s.teacher.set_params(vec![0.0; n]).unwrap();
    let uniform = make_global_targets(&s, 3.0).unwrap();
    assert!(uniform.as_matrix().as_slice().iter().all(|&p| (p - 0.2).abs() < 1e-15));
}
