use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bundle::DataBundle;
use super::config::{Algorithm, ExperimentConfig};
use super::phases::{
    aggregate_logits_in_order, average_params, client_distill_and_realign, client_infer_logits, for_each_client,
    make_global_targets, pretrain_students, pretrain_teacher, server_distill_teacher, train_student_local,
};
use super::seeds::derive_seed;
use super::state::{client_key, ClientState, RoundArtifacts, ServerState};
use crate::cost::{Actor, CostLedger, CostModelInputs, CostTerm, FlopKind};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{soften, SoftTargetMatrix};
use crate::metrics::{evaluate, RoundRecord};
use crate::nn::{flop_profile, FlopProfile, Model};
use crate::payload::{Payload, ScalarWidth};

/// Everything a finished run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub algorithm: Algorithm,
    /// Round 0 is the post-pretraining evaluation.
    pub records: Vec<RoundRecord>,
    pub ledger: CostLedger,
    pub cost_inputs: CostModelInputs,
    #[serde(skip)]
    pub artifacts: Vec<RoundArtifacts>,
    pub client_params: Vec<Vec<f64>>,
    pub teacher_params: Option<Vec<f64>>,
}

impl RunHistory {
    pub fn final_record(&self) -> &RoundRecord {
        self.records.last().expect("history always holds the round-0 record")
    }
}

/// Analytic cost inputs implied by the configuration alone.
///
/// The proxy holds `⌊|Dp|/C⌋` samples per class, so its effective size is
/// rounded down to a multiple of `C`.
pub fn cost_inputs(cfg: &ExperimentConfig) -> Result<CostModelInputs> {
    cfg.validate()?;
    let proxy = cfg.proxy_size / cfg.num_classes * cfg.num_classes;
    cost_inputs_for(cfg, &cfg.client_sizes, proxy)
}

/// Analytic cost inputs for explicit client and proxy sizes.
pub fn cost_inputs_for(cfg: &ExperimentConfig, client_sizes: &[usize], proxy_size: usize) -> Result<CostModelInputs> {
    let k = client_sizes.len();
    let archs = cfg.client_architectures(k)?;
    let student_profiles: Vec<FlopProfile> = archs.iter().map(|a| flop_profile(a, cfg.sample_len)).collect();
    let student_param_count = match archs.first() {
        Some(a) => Model::new(a.clone(), cfg.sample_len, cfg.num_classes)?.param_count(),
        None => 0,
    };
    let teacher_profile = if cfg.uses_teacher() {
        Some(flop_profile(&cfg.teacher_layers()?, cfg.sample_len))
    } else {
        None
    };
    let (distill, local) = effective_epochs(cfg);
    Ok(CostModelInputs {
        algorithm: cfg.algorithm,
        num_clients: k,
        proxy_size: if cfg.algorithm == Algorithm::FedAvg { 0 } else { proxy_size },
        client_sizes: client_sizes.to_vec(),
        num_classes: cfg.num_classes,
        width: cfg.width()?,
        student_pretrain_epochs: cfg.student_pretrain_epochs,
        teacher_pretrain_epochs: if teacher_profile.is_some() { cfg.teacher_pretrain_epochs } else { 0 },
        rounds: cfg.rounds,
        student_profiles,
        teacher_profile,
        student_param_count,
        student_distill_epochs: distill,
        student_local_epochs: local,
        teacher_distill_epochs: if teacher_profile.is_some() { cfg.teacher_distill_epochs } else { 0 },
    })
}

/// Per-round student distillation and private-data epochs after ablation flags.
fn effective_epochs(cfg: &ExperimentConfig) -> (usize, usize) {
    match cfg.algorithm {
        Algorithm::FedAvg => (0, cfg.student_local_epochs),
        _ => (
            if cfg.skip_student_distill { 0 } else { cfg.student_distill_epochs },
            if cfg.skip_realign { 0 } else { cfg.student_local_epochs },
        ),
    }
}

/// Build the data and run the configured algorithm.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunHistory> {
    let bundle = DataBundle::build(cfg)?;
    run(cfg, &bundle)
}

/// Dispatch on `cfg.algorithm`.
pub fn run(cfg: &ExperimentConfig, bundle: &DataBundle) -> Result<RunHistory> {
    match cfg.algorithm {
        Algorithm::BiFedKD => run_bifedkd(cfg, bundle),
        Algorithm::FedMD => run_fedmd(cfg, bundle),
        Algorithm::FedAvg => run_fedavg(cfg, bundle),
    }
}

pub fn run_bifedkd(cfg: &ExperimentConfig, bundle: &DataBundle) -> Result<RunHistory> {
    expect_algorithm(cfg, Algorithm::BiFedKD)?;
    run_distillation(cfg, bundle, cfg.teacher_stage)
}

pub fn run_fedmd(cfg: &ExperimentConfig, bundle: &DataBundle) -> Result<RunHistory> {
    expect_algorithm(cfg, Algorithm::FedMD)?;
    run_distillation(cfg, bundle, false)
}

fn expect_algorithm(cfg: &ExperimentConfig, algorithm: Algorithm) -> Result<()> {
    if cfg.algorithm != algorithm {
        return Err(Error::config(format!(
            "config selects {}, runner is {algorithm}",
            cfg.algorithm
        )));
    }
    cfg.validate()
}

/// Client positions sorted by stream key, the fixed cross-client reduction order.
fn reduction_order(clients: &[ClientState]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..clients.len()).collect();
    order.sort_by_key(|&k| (clients[k].key, clients[k].id));
    order
}

fn bundle_checks(cfg: &ExperimentConfig, bundle: &DataBundle) -> Result<()> {
    bundle.validate()?;
    if bundle.proxy.sample_len() != cfg.sample_len || bundle.proxy.num_classes() != cfg.num_classes {
        return Err(Error::config(format!(
            "data has length {} and {} classes, config expects {} and {}",
            bundle.proxy.sample_len(),
            bundle.proxy.num_classes(),
            cfg.sample_len,
            cfg.num_classes
        )));
    }
    Ok(())
}

fn evaluate_round(
    round: usize,
    clients: &mut [ClientState],
    test: &LabeledDataset,
    ledger: &mut CostLedger,
    parallel: bool,
) -> Result<RoundRecord> {
    let cms = for_each_client(clients, parallel, |c| evaluate(&c.student, test)).map_err(|e| e.in_phase(round, "evaluate"))?;
    let snap = ledger.snapshot(round);
    Ok(RoundRecord::from_matrices(
        round,
        &cms,
        snap.uplink_bits,
        snap.downlink_bits,
        snap.flops,
    ))
}

fn charge(ledger: &mut CostLedger, actor: Actor, term: CostTerm, kind: FlopKind, samples: usize, per_sample: u64) {
    ledger.charge_flops(actor, term, kind, samples as u128 * per_sample as u128);
}

/// Decode broadcast soft targets and renormalise each row, since reduced
/// precision can leave rows slightly off the simplex.
fn decode_targets(payload: &Payload, rows: usize, cols: usize, temperature: f64) -> Result<SoftTargetMatrix> {
    let mut m = payload.decode_matrix(rows, cols)?;
    for i in 0..rows {
        let row = m.row_mut(i);
        let s: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    SoftTargetMatrix::from_probabilities(m, temperature)
}

fn run_distillation(cfg: &ExperimentConfig, bundle: &DataBundle, with_teacher: bool) -> Result<RunHistory> {
    bundle_checks(cfg, bundle)?;
    let k = bundle.num_clients();
    let width: ScalarWidth = cfg.width()?;
    let archs = cfg.client_architectures(k)?;
    let proxy = &bundle.proxy;
    let (dp, c) = (proxy.len(), cfg.num_classes);
    if dp == 0 {
        return Err(Error::config("distillation needs a nonempty proxy set"));
    }
    let (distill_epochs, realign_epochs) = effective_epochs(cfg);
    let parallel = cfg.parallel_clients;

    let mut clients = archs
        .into_iter()
        .zip(&bundle.clients)
        .enumerate()
        .map(|(id, (layers, data))| {
            ClientState::new(id, layers, data.clone(), cfg.student_lr, cfg.seed, cfg.rng_keying)
        })
        .collect::<Result<Vec<_>>>()?;
    let profiles: Vec<FlopProfile> = clients.iter().map(|c| c.student.flop_profile()).collect();
    let order = reduction_order(&clients);

    let mut server = if with_teacher {
        Some(ServerState::new(cfg.teacher_layers()?, proxy.clone(), cfg.teacher_lr, cfg.seed)?)
    } else {
        None
    };
    let teacher_profile = server.as_ref().map(|s| s.teacher.flop_profile());

    let mut cost = cost_inputs_for(cfg, &bundle.clients.iter().map(LabeledDataset::len).collect::<Vec<_>>(), dp)?;
    if !with_teacher {
        cost.teacher_profile = None;
        cost.teacher_pretrain_epochs = 0;
        cost.teacher_distill_epochs = 0;
    }
    let mut ledger = CostLedger::new(k);

    if let (Some(s), Some(f)) = (server.as_mut(), teacher_profile) {
        let n = pretrain_teacher(s, cfg.teacher_pretrain_epochs, cfg.batch_size)
            .map_err(|e| e.in_phase(0, "pretrain_teacher"))?;
        charge(&mut ledger, Actor::Server, CostTerm::TeacherPretrain, FlopKind::Train, n, f.train_per_sample);
    }
    let trained = pretrain_students(&mut clients, cfg.student_pretrain_epochs, cfg.batch_size, parallel)
        .map_err(|e| e.in_phase(0, "pretrain_students"))?;
    for (id, n) in trained.into_iter().enumerate() {
        charge(&mut ledger, Actor::Client(id), CostTerm::ClientPretrain, FlopKind::Train, n, profiles[id].train_per_sample);
    }

    let mut records = vec![evaluate_round(0, &mut clients, &bundle.test, &mut ledger, parallel)?];
    let mut artifacts = Vec::new();
    let student_cfg = cfg.student_distill();
    let teacher_cfg = cfg.teacher_distill();

    for r in 1..=cfg.rounds {
        let logits = for_each_client(&mut clients, parallel, |cl| client_infer_logits(cl, proxy))
            .map_err(|e| e.in_phase(r, "client_infer_logits"))?;
        let mut uploads = Vec::with_capacity(k);
        for (id, z) in logits.iter().enumerate() {
            charge(&mut ledger, Actor::Client(id), CostTerm::ClientProxyInfer, FlopKind::Infer, dp, profiles[id].infer_per_sample);
            let payload = Payload::encode_matrix(z, width);
            ledger.charge_uplink(id, payload.bit_len());
            uploads.push(payload.decode_matrix(dp, c).map_err(|e| e.in_phase(r, "uplink"))?);
        }

        let aggregate = aggregate_logits_in_order(&uploads, &order).map_err(|e| e.in_phase(r, "aggregate_logits"))?;
        ledger.charge_flops(
            Actor::Server,
            CostTerm::ServerAggregation,
            FlopKind::Aggregate,
            (k * dp * c) as u128,
        );
        let intermediate = soften(&aggregate, cfg.temperature).map_err(|e| e.in_phase(r, "soften"))?;

        let global = match (server.as_mut(), teacher_profile) {
            (Some(s), Some(f)) => {
                let n = server_distill_teacher(s, &intermediate, &teacher_cfg, cfg.teacher_distill_epochs, cfg.batch_size)
                    .map_err(|e| e.in_phase(r, "server_distill_teacher"))?;
                charge(&mut ledger, Actor::Server, CostTerm::ServerTrain, FlopKind::Train, n, f.train_per_sample);
                let q = make_global_targets(s, cfg.temperature).map_err(|e| e.in_phase(r, "make_global_targets"))?;
                charge(&mut ledger, Actor::Server, CostTerm::ServerInfer, FlopKind::Infer, dp, f.infer_per_sample);
                q
            }
            _ => intermediate.clone(),
        };

        let payload = Payload::encode_matrix(global.as_matrix(), width);
        for id in 0..k {
            ledger.charge_downlink(id, payload.bit_len());
        }
        let received = decode_targets(&payload, dp, c, cfg.temperature).map_err(|e| e.in_phase(r, "downlink"))?;

        let updates = for_each_client(&mut clients, parallel, |cl| {
            client_distill_and_realign(cl, &received, proxy, &student_cfg, distill_epochs, realign_epochs, cfg.batch_size)
        })
        .map_err(|e| e.in_phase(r, "client_distill_and_realign"))?;
        for (id, u) in updates.into_iter().enumerate() {
            let f = profiles[id].train_per_sample;
            charge(&mut ledger, Actor::Client(id), CostTerm::ClientProxyTrain, FlopKind::Train, u.distilled, f);
            charge(&mut ledger, Actor::Client(id), CostTerm::ClientPrivateTrain, FlopKind::Train, u.realigned, f);
        }

        if cfg.keep_artifacts {
            artifacts.push(RoundArtifacts {
                round: r,
                uploads,
                aggregate,
                intermediate,
                global,
            });
        }
        records.push(evaluate_round(r, &mut clients, &bundle.test, &mut ledger, parallel)?);
    }

    Ok(RunHistory {
        algorithm: cfg.algorithm,
        records,
        ledger,
        cost_inputs: cost,
        artifacts,
        client_params: clients.iter().map(|c| c.student.params().to_vec()).collect(),
        teacher_params: server.map(|s| s.teacher.params().to_vec()),
    })
}

/// Parameter averaging baseline. All clients start from one shared initialisation.
pub fn run_fedavg(cfg: &ExperimentConfig, bundle: &DataBundle) -> Result<RunHistory> {
    expect_algorithm(cfg, Algorithm::FedAvg)?;
    bundle_checks(cfg, bundle)?;
    let k = bundle.num_clients();
    let width = cfg.width()?;
    let archs = cfg.client_architectures(k)?;
    if archs.iter().any(|a| a != &archs[0]) {
        return Err(Error::config("fedavg requires every client to share one student architecture"));
    }
    let parallel = cfg.parallel_clients;
    let mut init = Model::new(archs[0].clone(), cfg.sample_len, cfg.num_classes)?;
    init.init_glorot(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "fedavg-init", 0)));
    let p = init.param_count();
    let profile = init.flop_profile();

    let mut clients: Vec<ClientState> = bundle
        .clients
        .iter()
        .enumerate()
        .map(|(id, data)| {
            let key = client_key(id, data, cfg.rng_keying);
            ClientState::from_model(id, key, init.clone(), data.clone(), cfg.student_lr, cfg.seed)
        })
        .collect();
    let order = reduction_order(&clients);
    let cost = cost_inputs_for(cfg, &bundle.clients.iter().map(LabeledDataset::len).collect::<Vec<_>>(), 0)?;
    let mut ledger = CostLedger::new(k);

    let trained = pretrain_students(&mut clients, cfg.student_pretrain_epochs, cfg.batch_size, parallel)
        .map_err(|e| e.in_phase(0, "pretrain_students"))?;
    for (id, n) in trained.into_iter().enumerate() {
        charge(&mut ledger, Actor::Client(id), CostTerm::ClientPretrain, FlopKind::Train, n, profile.train_per_sample);
    }
    let mut records = vec![evaluate_round(0, &mut clients, &bundle.test, &mut ledger, parallel)?];

    for r in 1..=cfg.rounds {
        let trained = for_each_client(&mut clients, parallel, |cl| {
            train_student_local(cl, cfg.student_local_epochs, cfg.batch_size)
        })
        .map_err(|e| e.in_phase(r, "local_train"))?;
        let mut uploads = Vec::with_capacity(k);
        for (id, n) in trained.into_iter().enumerate() {
            charge(&mut ledger, Actor::Client(id), CostTerm::ClientPrivateTrain, FlopKind::Train, n, profile.train_per_sample);
            let payload = Payload::encode(clients[id].student.params(), width);
            ledger.charge_uplink(id, payload.bit_len());
            uploads.push(payload.decode());
        }
        let views: Vec<&[f64]> = uploads.iter().map(Vec::as_slice).collect();
        let avg = average_params(&views, &order).map_err(|e| e.in_phase(r, "average_params"))?;
        ledger.charge_flops(Actor::Server, CostTerm::ServerAggregation, FlopKind::Aggregate, (k * p) as u128);
        let payload = Payload::encode(&avg, width);
        let broadcast = payload.decode();
        for (id, cl) in clients.iter_mut().enumerate() {
            ledger.charge_downlink(id, payload.bit_len());
            cl.student.set_params(broadcast.clone()).map_err(|e| e.in_phase(r, "broadcast"))?;
        }
        records.push(evaluate_round(r, &mut clients, &bundle.test, &mut ledger, parallel)?);
    }

    Ok(RunHistory {
        algorithm: Algorithm::FedAvg,
        records,
        ledger,
        cost_inputs: cost,
        artifacts: Vec::new(),
        client_params: clients.iter().map(|c| c.student.params().to_vec()).collect(),
        teacher_params: None,
    })
}
