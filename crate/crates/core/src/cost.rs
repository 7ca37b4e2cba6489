//! Communication and computation accounting.
//!
//! The analytic side evaluates the closed-form per-round and total costs from
//! dataset sizes and per-sample FLOP profiles. The measured side is a ledger
//! the protocol charges as it runs: bits come from serialized payload lengths,
//! FLOPs from sample counts times the same profiles. The two must agree
//! exactly, term by term, in integer arithmetic.
//!
//! The aggregation term is concretised as one accumulate per aggregated
//! scalar: `K·|Dp|·C` for logit averaging, `K·P` for parameter averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::FlopProfile;
use crate::payload::ScalarWidth;
use crate::protocol::Algorithm;

/// Bits one client exchanges per round in logit-based distillation: upload
/// `|Dp|·C` logits, download `|Dp|·C` soft targets.
pub fn distill_bits_per_client_round(width: ScalarWidth, proxy_size: usize, num_classes: usize) -> u128 {
    2 * width.bits() as u128 * proxy_size as u128 * num_classes as u128
}

/// Bits one client exchanges per round in parameter averaging: upload and
/// download `P` parameters.
pub fn fedavg_bits_per_client_round(width: ScalarWidth, param_count: usize) -> u128 {
    2 * width.bits() as u128 * param_count as u128
}

/// Everything the closed-form cost model needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModelInputs {
    pub algorithm: Algorithm,
    pub num_clients: usize,
    pub proxy_size: usize,
    pub client_sizes: Vec<usize>,
    pub num_classes: usize,
    pub width: ScalarWidth,
    pub student_pretrain_epochs: usize,
    pub teacher_pretrain_epochs: usize,
    pub rounds: usize,
    pub student_profiles: Vec<FlopProfile>,
    /// `None` when no server-side teacher runs (FedMD, FedAvg, or the teacher stage disabled).
    pub teacher_profile: Option<FlopProfile>,
    /// Parameter count of the (shared) student architecture; used by FedAvg.
    pub student_param_count: usize,
    /// Distillation passes over the proxy per round on each client.
    pub student_distill_epochs: usize,
    /// Re-alignment (or FedAvg local) passes over the private set per round.
    pub student_local_epochs: usize,
    /// Teacher distillation passes over the proxy per round.
    pub teacher_distill_epochs: usize,
}

impl CostModelInputs {
    pub fn validate(&self) -> Result<()> {
        if self.client_sizes.len() != self.num_clients || self.student_profiles.len() != self.num_clients {
            return Err(Error::config(format!(
                "{} clients but {} sizes and {} FLOP profiles",
                self.num_clients,
                self.client_sizes.len(),
                self.student_profiles.len()
            )));
        }
        Ok(())
    }
}

/// Per-client, per-round bits for logit exchange.
pub fn comm_per_round_client(inputs: &CostModelInputs) -> u128 {
    distill_bits_per_client_round(inputs.width, inputs.proxy_size, inputs.num_classes)
}

/// Per-round bits over all clients.
pub fn comm_per_round_total(inputs: &CostModelInputs) -> u128 {
    inputs.num_clients as u128 * comm_per_round_client(inputs)
}

/// Per-client, per-round bits for whichever algorithm `inputs` describes.
pub fn algorithm_comm_per_client_round(inputs: &CostModelInputs) -> u128 {
    match inputs.algorithm {
        Algorithm::FedAvg => fedavg_bits_per_client_round(inputs.width, inputs.student_param_count),
        Algorithm::BiFedKD | Algorithm::FedMD => comm_per_round_client(inputs),
    }
}

/// Per-round bits over all clients for whichever algorithm `inputs` describes.
pub fn algorithm_comm_per_round(inputs: &CostModelInputs) -> u128 {
    inputs.num_clients as u128 * algorithm_comm_per_client_round(inputs)
}

/// Named FLOP terms. Per-round terms are reported per round and as totals over `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostTerm {
    /// `Σ_k E_k·|Dk|·F_k^train`
    ClientPretrain,
    /// `E_s·|Dp|·F_s^train`
    TeacherPretrain,
    /// `Σ_k |Dp|·F_k^infer` per round
    ClientProxyInfer,
    /// `Σ_k |Dp|·F_k^train` per round
    ClientProxyTrain,
    /// `Σ_k |Dk|·F_k^train` per round
    ClientPrivateTrain,
    /// `|Dp|·F_s^train` per round
    ServerTrain,
    /// `|Dp|·F_s^infer` per round
    ServerInfer,
    /// `K·|Dp|·C` (or `K·P`) per round
    ServerAggregation,
}

impl CostTerm {
    pub const ALL: [CostTerm; 8] = [
        CostTerm::ClientPretrain,
        CostTerm::TeacherPretrain,
        CostTerm::ClientProxyInfer,
        CostTerm::ClientProxyTrain,
        CostTerm::ClientPrivateTrain,
        CostTerm::ServerTrain,
        CostTerm::ServerInfer,
        CostTerm::ServerAggregation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CostTerm::ClientPretrain => "client_pretrain",
            CostTerm::TeacherPretrain => "teacher_pretrain",
            CostTerm::ClientProxyInfer => "client_proxy_infer",
            CostTerm::ClientProxyTrain => "client_proxy_train",
            CostTerm::ClientPrivateTrain => "client_private_train",
            CostTerm::ServerTrain => "server_train",
            CostTerm::ServerInfer => "server_infer",
            CostTerm::ServerAggregation => "server_aggregation",
        }
    }

    pub fn is_per_round(self) -> bool {
        !matches!(self, CostTerm::ClientPretrain | CostTerm::TeacherPretrain)
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Term-by-term evaluation of the total computation cost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeBreakdown {
    pub rounds: usize,
    /// Pre-training terms are one-off; round terms are per round.
    pub terms: Vec<(CostTerm, u128)>,
    /// Σ_k per-round client cost.
    pub client_round: u128,
    /// Per-round server cost.
    pub server_round: u128,
    pub total: u128,
}

impl ComputeBreakdown {
    pub fn term(&self, term: CostTerm) -> u128 {
        self.terms.iter().find(|(t, _)| *t == term).map_or(0, |(_, v)| *v)
    }

    /// Term value accumulated over the whole run (per-round terms times `R`).
    pub fn term_total(&self, term: CostTerm) -> u128 {
        let v = self.term(term);
        if term.is_per_round() {
            v * self.rounds as u128
        } else {
            v
        }
    }

    pub fn pretrain(&self) -> u128 {
        self.term(CostTerm::ClientPretrain) + self.term(CostTerm::TeacherPretrain)
    }
}

/// Closed-form total computation for the configured algorithm.
///
/// BiFedKD follows the full expression with a teacher; without a teacher the
/// server terms reduce to aggregation only. FedAvg clients only train on their
/// private data each round and the server averages `P` parameters per client.
pub fn compute_total(inputs: &CostModelInputs) -> Result<ComputeBreakdown> {
    inputs.validate()?;
    let dp = inputs.proxy_size as u128;
    let k = inputs.num_clients as u128;
    let clients = inputs.client_sizes.iter().zip(&inputs.student_profiles);

    let client_pretrain: u128 = clients
        .clone()
        .map(|(&n, f)| inputs.student_pretrain_epochs as u128 * n as u128 * f.train_per_sample as u128)
        .sum();
    let private_train: u128 = clients
        .clone()
        .map(|(&n, f)| inputs.student_local_epochs as u128 * n as u128 * f.train_per_sample as u128)
        .sum();

    let (proxy_infer, proxy_train, aggregation) = match inputs.algorithm {
        Algorithm::FedAvg => (0, 0, k * inputs.student_param_count as u128),
        Algorithm::BiFedKD | Algorithm::FedMD => {
            let infer: u128 = inputs
                .student_profiles
                .iter()
                .map(|f| dp * f.infer_per_sample as u128)
                .sum();
            let train: u128 = inputs
                .student_profiles
                .iter()
                .map(|f| inputs.student_distill_epochs as u128 * dp * f.train_per_sample as u128)
                .sum();
            (infer, train, k * dp * inputs.num_classes as u128)
        }
    };

    let teacher = match inputs.algorithm {
        Algorithm::BiFedKD => inputs.teacher_profile,
        _ => None,
    };
    let (teacher_pretrain, server_train, server_infer) = match teacher {
        Some(f) => (
            inputs.teacher_pretrain_epochs as u128 * dp * f.train_per_sample as u128,
            inputs.teacher_distill_epochs as u128 * dp * f.train_per_sample as u128,
            dp * f.infer_per_sample as u128,
        ),
        None => (0, 0, 0),
    };

    let terms = vec![
        (CostTerm::ClientPretrain, client_pretrain),
        (CostTerm::TeacherPretrain, teacher_pretrain),
        (CostTerm::ClientProxyInfer, proxy_infer),
        (CostTerm::ClientProxyTrain, proxy_train),
        (CostTerm::ClientPrivateTrain, private_train),
        (CostTerm::ServerTrain, server_train),
        (CostTerm::ServerInfer, server_infer),
        (CostTerm::ServerAggregation, aggregation),
    ];
    let client_round = proxy_infer + proxy_train + private_train;
    let server_round = server_train + server_infer + aggregation;
    let r = inputs.rounds as u128;
    Ok(ComputeBreakdown {
        rounds: inputs.rounds,
        terms,
        client_round,
        server_round,
        total: client_pretrain + teacher_pretrain + r * (client_round + server_round),
    })
}

/// Who spent the resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Actor {
    Client(usize),
    Server,
}

/// Cumulative counters of one actor.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorCounters {
    pub uplink_bits: u128,
    pub downlink_bits: u128,
    pub train_flops: u128,
    pub infer_flops: u128,
    pub aggregation_flops: u128,
    by_term: [u128; 8],
}

impl ActorCounters {
    pub fn flops(&self) -> u128 {
        self.train_flops + self.infer_flops + self.aggregation_flops
    }

    pub fn term(&self, term: CostTerm) -> u128 {
        self.by_term[term.index()]
    }
}

/// System totals captured at a round barrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub round: usize,
    pub uplink_bits: u128,
    pub downlink_bits: u128,
    pub flops: u128,
}

/// Measured resource usage, split by actor and by cost term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    clients: Vec<ActorCounters>,
    server: ActorCounters,
    snapshots: Vec<LedgerSnapshot>,
}

/// What kind of FLOPs a charge represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopKind {
    Train,
    Infer,
    Aggregate,
}

impl CostLedger {
    pub fn new(num_clients: usize) -> Self {
        Self {
            clients: vec![ActorCounters::default(); num_clients],
            server: ActorCounters::default(),
            snapshots: Vec::new(),
        }
    }

    fn actor_mut(&mut self, actor: Actor) -> &mut ActorCounters {
        match actor {
            Actor::Client(k) => &mut self.clients[k],
            Actor::Server => &mut self.server,
        }
    }

    pub fn charge_flops(&mut self, actor: Actor, term: CostTerm, kind: FlopKind, flops: u128) {
        let a = self.actor_mut(actor);
        match kind {
            FlopKind::Train => a.train_flops += flops,
            FlopKind::Infer => a.infer_flops += flops,
            FlopKind::Aggregate => a.aggregation_flops += flops,
        }
        a.by_term[term.index()] += flops;
    }

    /// Client `k` sent `bits` to the server.
    pub fn charge_uplink(&mut self, k: usize, bits: u128) {
        self.clients[k].uplink_bits += bits;
    }

    /// Client `k` received `bits` from the server.
    pub fn charge_downlink(&mut self, k: usize, bits: u128) {
        self.clients[k].downlink_bits += bits;
    }

    pub fn snapshot(&mut self, round: usize) -> LedgerSnapshot {
        let s = LedgerSnapshot {
            round,
            uplink_bits: self.uplink_bits(),
            downlink_bits: self.downlink_bits(),
            flops: self.flops(),
        };
        self.snapshots.push(s);
        s
    }

    pub fn snapshots(&self) -> &[LedgerSnapshot] {
        &self.snapshots
    }

    pub fn client(&self, k: usize) -> &ActorCounters {
        &self.clients[k]
    }

    pub fn clients(&self) -> &[ActorCounters] {
        &self.clients
    }

    pub fn server(&self) -> &ActorCounters {
        &self.server
    }

    pub fn uplink_bits(&self) -> u128 {
        self.clients.iter().map(|c| c.uplink_bits).sum()
    }

    pub fn downlink_bits(&self) -> u128 {
        self.clients.iter().map(|c| c.downlink_bits).sum()
    }

    pub fn flops(&self) -> u128 {
        self.server.flops() + self.clients.iter().map(ActorCounters::flops).sum::<u128>()
    }

    /// Measured FLOPs attributed to `term` over all actors.
    pub fn term(&self, term: CostTerm) -> u128 {
        self.server.term(term) + self.clients.iter().map(|c| c.term(term)).sum::<u128>()
    }
}

/// One measured-versus-analytic comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermCheck {
    pub term: String,
    pub measured: u128,
    pub analytic: u128,
}

impl TermCheck {
    pub fn delta(&self) -> i128 {
        self.measured as i128 - self.analytic as i128
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub checks: Vec<TermCheck>,
}

impl CostReport {
    pub fn is_exact(&self) -> bool {
        self.checks.iter().all(|c| c.delta() == 0)
    }

    pub fn verify(&self) -> Result<()> {
        match self.checks.iter().find(|c| c.delta() != 0) {
            None => Ok(()),
            Some(c) => Err(Error::CostMismatch {
                term: c.term.clone(),
                measured: c.measured,
                analytic: c.analytic,
            }),
        }
    }
}

/// Compare a completed run's ledger against the closed-form model.
pub fn cost_report(ledger: &CostLedger, inputs: &CostModelInputs) -> Result<CostReport> {
    let breakdown = compute_total(inputs)?;
    let mut checks = vec![TermCheck {
        term: "communication".into(),
        measured: ledger.uplink_bits() + ledger.downlink_bits(),
        analytic: algorithm_comm_per_round(inputs) * inputs.rounds as u128,
    }];
    for term in CostTerm::ALL {
        checks.push(TermCheck {
            term: term.name().into(),
            measured: ledger.term(term),
            analytic: breakdown.term_total(term),
        });
    }
    checks.push(TermCheck {
        term: "total_flops".into(),
        measured: ledger.flops(),
        analytic: breakdown.total,
    });
    Ok(CostReport { checks })
}

/// Like [`cost_report`], but any nonzero delta is an error naming the term.
pub fn measured_vs_analytic(ledger: &CostLedger, inputs: &CostModelInputs) -> Result<CostReport> {
    let report = cost_report(ledger, inputs)?;
    report.verify()?;
    Ok(report)
}
