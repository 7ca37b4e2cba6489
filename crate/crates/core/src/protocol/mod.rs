//! Round orchestration for BiFedKD and the FedMD and FedAvg baselines.

mod bundle;
mod config;
mod phases;
mod runner;
mod seeds;
mod state;

pub use bundle::{partition_plan, DataBundle, SplitIndices};
pub use config::{
    Algorithm, DataSource, ExperimentConfig, PartitionSpec, RngKeying, DEFAULT_STUDENT_ARCH, DEFAULT_TEACHER_ARCH,
};
pub use phases::{
    aggregate_logits, aggregate_logits_in_order, average_params, client_distill_and_realign, client_infer_logits,
    for_each_client, make_global_targets, pretrain_students, pretrain_teacher, server_distill_teacher,
    train_student_local, ClientUpdate,
};
pub use runner::{cost_inputs, cost_inputs_for, run, run_bifedkd, run_experiment, run_fedavg, run_fedmd, RunHistory};
pub use seeds::derive_seed;
pub use state::{batch_labels, client_key, train_epoch, ClientState, RoundArtifacts, ServerState};
