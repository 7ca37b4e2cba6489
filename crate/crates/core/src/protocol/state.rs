use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RngKeying;
use super::seeds::derive_seed;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::SoftTargetMatrix;
use crate::matrix::LogitMatrix;
use crate::nn::{AdamState, LayerSpec, Model};

/// Stream key of a client under the given keying mode.
pub fn client_key(id: usize, data: &LabeledDataset, keying: RngKeying) -> u64 {
    match keying {
        RngKeying::ClientId => id as u64,
        RngKeying::Content => data.content_seed(),
    }
}

/// One participant: its student, optimizer, private data and random stream.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    /// Stream and reduction-order key: the id, or a digest of the private data.
    pub key: u64,
    pub student: Model,
    pub adam: AdamState,
    pub data: LabeledDataset,
    pub rng: ChaCha8Rng,
}

impl ClientState {
    /// Glorot-initialised student whose streams derive from `(seed, key)`.
    pub fn new(
        id: usize,
        layers: Vec<LayerSpec>,
        data: LabeledDataset,
        lr: f64,
        seed: u64,
        keying: RngKeying,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::config(format!("client {id} has no private data")));
        }
        let key = client_key(id, &data, keying);
        let mut student = Model::new(layers, data.sample_len(), data.num_classes())?;
        student.init_glorot(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "client-init", key)));
        Ok(Self::from_model(id, key, student, data, lr, seed))
    }

    /// Wrap an existing model; the optimizer starts fresh.
    pub fn from_model(id: usize, key: u64, student: Model, data: LabeledDataset, lr: f64, seed: u64) -> Self {
        Self {
            id,
            key,
            adam: AdamState::new(student.param_count(), lr),
            student,
            data,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, "client-train", key)),
        }
    }
}

/// The server's teacher, optimizer, labeled proxy set and random stream.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub teacher: Model,
    pub adam: AdamState,
    pub proxy: LabeledDataset,
    pub rng: ChaCha8Rng,
}

impl ServerState {
    pub fn new(layers: Vec<LayerSpec>, proxy: LabeledDataset, lr: f64, seed: u64) -> Result<Self> {
        let mut teacher = Model::new(layers, proxy.sample_len(), proxy.num_classes())?;
        teacher.init_glorot(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "server-init", 0)));
        Ok(Self::from_model(teacher, proxy, lr, seed))
    }

    pub fn from_model(teacher: Model, proxy: LabeledDataset, lr: f64, seed: u64) -> Self {
        Self {
            adam: AdamState::new(teacher.param_count(), lr),
            teacher,
            proxy,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, "server-train", 0)),
        }
    }
}

/// Matrices exchanged in one distillation round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundArtifacts {
    pub round: usize,
    /// Uploaded logits as decoded by the server, in client-id order.
    pub uploads: Vec<LogitMatrix>,
    pub aggregate: LogitMatrix,
    pub intermediate: SoftTargetMatrix,
    pub global: SoftTargetMatrix,
}

/// One epoch of shuffled mini-batch Adam over `data`.
///
/// `grad_at_logits` receives the batch logits and the dataset indices of the
/// batch rows and returns the loss gradient with respect to those logits.
/// Returns the number of samples trained on.
pub fn train_epoch<F>(
    model: &mut Model,
    adam: &mut AdamState,
    data: &LabeledDataset,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    mut grad_at_logits: F,
) -> Result<usize>
where
    F: FnMut(&LogitMatrix, &[usize]) -> Result<LogitMatrix>,
{
    if batch_size == 0 {
        return Err(Error::param("batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    for batch in order.chunks(batch_size) {
        let rows: Vec<&[f64]> = batch.iter().map(|&i| data.sample(i)).collect();
        let (traces, logits) = model.trace_batch(&rows)?;
        let grad = grad_at_logits(&logits, batch)?;
        let grads = model.backward_traced(&rows, &traces, &grad)?;
        adam.step(model.params_mut(), &grads)?;
    }
    Ok(data.len())
}

/// Labels of `data` at `indices`.
pub fn batch_labels(data: &LabeledDataset, indices: &[usize]) -> Vec<usize> {
    indices.iter().map(|&i| data.label(i)).collect()
}
