//! One function per protocol phase. Phases mutate state and report how many
//! samples they processed; the runners turn those counts into ledger charges.

use rayon::prelude::*;

use super::state::{batch_labels, train_epoch, ClientState, ServerState};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, distillation_loss, soften, DistillConfig, SoftTargetMatrix};
use crate::matrix::LogitMatrix;
use crate::nn::{AdamState, Model};

/// Apply `f` to every client, optionally on the rayon pool. Results come back
/// in client order; the first failing client (by position) wins.
pub fn for_each_client<T, F>(clients: &mut [ClientState], parallel: bool, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ClientState) -> Result<T> + Sync + Send,
{
    if parallel {
        clients.par_iter_mut().map(f).collect::<Vec<_>>().into_iter().collect()
    } else {
        clients.iter_mut().map(f).collect()
    }
}

fn ce_epochs(
    model: &mut Model,
    adam: &mut AdamState,
    data: &LabeledDataset,
    epochs: usize,
    batch_size: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<usize> {
    let mut trained = 0;
    for _ in 0..epochs {
        trained += train_epoch(model, adam, data, batch_size, rng, |logits, idx| {
            Ok(cross_entropy(logits, &batch_labels(data, idx))?.1)
        })?;
    }
    Ok(trained)
}

/// Supervised warm start of the teacher on the proxy set.
pub fn pretrain_teacher(server: &mut ServerState, epochs: usize, batch_size: usize) -> Result<usize> {
    let ServerState {
        teacher,
        adam,
        proxy,
        rng,
    } = server;
    ce_epochs(teacher, adam, proxy, epochs, batch_size, rng)
}

/// Supervised training of one student on its private data. Also serves as
/// re-alignment and as the FedAvg local update.
pub fn train_student_local(client: &mut ClientState, epochs: usize, batch_size: usize) -> Result<usize> {
    let ClientState {
        student,
        adam,
        data,
        rng,
        ..
    } = client;
    ce_epochs(student, adam, data, epochs, batch_size, rng)
}

pub fn pretrain_students(
    clients: &mut [ClientState],
    epochs: usize,
    batch_size: usize,
    parallel: bool,
) -> Result<Vec<usize>> {
    for_each_client(clients, parallel, |c| train_student_local(c, epochs, batch_size))
}

/// Student logits on the proxy set, one row per proxy sample in proxy order.
pub fn client_infer_logits(client: &ClientState, proxy: &LabeledDataset) -> Result<LogitMatrix> {
    if proxy.is_empty() {
        return Err(Error::Domain("inference on an empty proxy set".into()));
    }
    let rows: Vec<&[f64]> = proxy.iter_samples().collect();
    client.student.forward(&rows)
}

/// Element-wise mean of the uploads, summed in their given order.
pub fn aggregate_logits(uploads: &[LogitMatrix]) -> Result<LogitMatrix> {
    let order: Vec<usize> = (0..uploads.len()).collect();
    aggregate_logits_in_order(uploads, &order)
}

/// Element-wise mean of the uploads, summed in the order `order` lists them.
/// A shape mismatch names the offending upload index.
pub fn aggregate_logits_in_order(uploads: &[LogitMatrix], order: &[usize]) -> Result<LogitMatrix> {
    let first = uploads
        .first()
        .ok_or_else(|| Error::shape("aggregation needs at least one upload"))?;
    let dims = first.dims();
    if let Some((k, u)) = uploads.iter().enumerate().find(|(_, u)| u.dims() != dims) {
        return Err(Error::shape(format!(
            "client {k} uploaded {}x{}, expected {}x{}",
            u.rows(),
            u.cols(),
            dims.0,
            dims.1
        )));
    }
    let mut sum = LogitMatrix::zeros(dims.0, dims.1);
    for &k in order {
        for (s, v) in sum.as_mut_slice().iter_mut().zip(uploads[k].as_slice()) {
            *s += v;
        }
    }
    let n = uploads.len() as f64;
    for s in sum.as_mut_slice() {
        *s /= n;
    }
    Ok(sum)
}

fn distill_epochs(
    model: &mut Model,
    adam: &mut AdamState,
    proxy: &LabeledDataset,
    targets: &SoftTargetMatrix,
    cfg: &DistillConfig,
    epochs: usize,
    batch_size: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<usize> {
    if targets.rows() != proxy.len() || targets.cols() != proxy.num_classes() {
        return Err(Error::shape(format!(
            "{}x{} targets for a proxy of {}x{}",
            targets.rows(),
            targets.cols(),
            proxy.len(),
            proxy.num_classes()
        )));
    }
    cfg.validate()?;
    let mut trained = 0;
    for _ in 0..epochs {
        trained += train_epoch(model, adam, proxy, batch_size, rng, |logits, idx| {
            Ok(distillation_loss(logits, &batch_labels(proxy, idx), &targets.select_rows(idx), cfg)?.1)
        })?;
    }
    Ok(trained)
}

/// Teacher distillation on the labeled proxy towards the intermediate targets.
pub fn server_distill_teacher(
    server: &mut ServerState,
    targets: &SoftTargetMatrix,
    cfg: &DistillConfig,
    epochs: usize,
    batch_size: usize,
) -> Result<usize> {
    let ServerState {
        teacher,
        adam,
        proxy,
        rng,
    } = server;
    distill_epochs(teacher, adam, proxy, targets, cfg, epochs, batch_size, rng)
}

/// Softened teacher outputs on the proxy set.
pub fn make_global_targets(server: &ServerState, temperature: f64) -> Result<SoftTargetMatrix> {
    let rows: Vec<&[f64]> = server.proxy.iter_samples().collect();
    soften(&server.teacher.forward(&rows)?, temperature)
}

/// Samples processed by [`client_distill_and_realign`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClientUpdate {
    pub distilled: usize,
    pub realigned: usize,
}

/// Distil the student towards the global targets on the proxy, then re-align
/// it on its private data.
pub fn client_distill_and_realign(
    client: &mut ClientState,
    targets: &SoftTargetMatrix,
    proxy: &LabeledDataset,
    cfg: &DistillConfig,
    distill: usize,
    realign: usize,
    batch_size: usize,
) -> Result<ClientUpdate> {
    let distilled = {
        let ClientState {
            student, adam, rng, ..
        } = client;
        distill_epochs(student, adam, proxy, targets, cfg, distill, batch_size, rng)?
    };
    let realigned = train_student_local(client, realign, batch_size)?;
    Ok(ClientUpdate { distilled, realigned })
}

/// Uniform element-wise average of parameter vectors, summed in `order`.
pub fn average_params(params: &[&[f64]], order: &[usize]) -> Result<Vec<f64>> {
    let n = params
        .first()
        .map(|p| p.len())
        .ok_or_else(|| Error::shape("averaging needs at least one parameter vector"))?;
    if let Some(k) = params.iter().position(|p| p.len() != n) {
        return Err(Error::config(format!(
            "client {k} has {} parameters, expected {n}",
            params[k].len()
        )));
    }
    let mut sum = vec![0.0; n];
    for &k in order {
        for (s, v) in sum.iter_mut().zip(params[k]) {
            *s += v;
        }
    }
    let k = params.len() as f64;
    for s in &mut sum {
        *s /= k;
    }
    Ok(sum)
}
