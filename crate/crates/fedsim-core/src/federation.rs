//! Federated rounds: client sampling, local training, aggregation of
//! pseudo-gradients, server optimizers, and BN-statistics locality.
//!
//! A round samples `k` clients, trains each one locally from the global
//! learnables, and aggregates the weighted mean of their parameter
//! deltas into a pseudo-gradient `delta = sum_i (n_i / sum n) *
//! (client_i - global)`. Server optimizers treat `-delta` as the
//! gradient, so plain SGD at learning rate 1.0 is literally federated
//! averaging.
//!
//! With `silobn` enabled, only learnables (including the BN affine pair)
//! are aggregated; every client keeps its own BN running statistics, and
//! the server's statistics are never written. Without it, running
//! statistics are averaged with the same weights as the parameters.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{Dataset, DomainKey};
use crate::error::{Error, Result};
use crate::model::{local_train, BnStats, ModelParams, SampleTransform};
use crate::partition::Partition;
use crate::rng::StreamRng;

/// The server's full model state: learnables plus BN running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub params: ModelParams,
    pub bn_stats: BnStats,
}

/// One client: its slice of the training set plus, after its first
/// participation, its local BN statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientState {
    pub id: usize,
    /// Positions of the client's samples in the training dataset.
    pub sample_indices: Vec<usize>,
    /// `None` until the client first participates.
    pub bn_stats: Option<BnStats>,
    /// Domains present in the client's data.
    pub domains: BTreeSet<DomainKey>,
}

impl ClientState {
    pub fn has_participated(&self) -> bool {
        self.bn_stats.is_some()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_indices.len()
    }
}

/// Materialize client states from a partition over the training set.
pub fn init_clients(partition: &Partition, train: &Dataset) -> Result<Vec<ClientState>> {
    let index = train.index_by_id();
    partition
        .clients
        .iter()
        .enumerate()
        .map(|(id, members)| {
            let mut sample_indices = Vec::with_capacity(members.len());
            let mut domains = BTreeSet::new();
            for sample_id in members {
                let &i = index.get(sample_id.as_str()).ok_or_else(|| {
                    Error::Data(format!(
                        "partition references sample id '{sample_id}' absent from the training set"
                    ))
                })?;
                sample_indices.push(i);
                domains.insert(train.samples[i].domain);
            }
            Ok(ClientState {
                id,
                sample_indices,
                bn_stats: None,
                domains,
            })
        })
        .collect()
}

/// Server-side optimizer family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServerOptKind {
    Sgd,
    FedAvgM,
    Adam,
    AdaGrad,
}

impl ServerOptKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ServerOptKind::Sgd => "sgd",
            ServerOptKind::FedAvgM => "fedavgm",
            ServerOptKind::Adam => "adam",
            ServerOptKind::AdaGrad => "adagrad",
        }
    }
}

/// Server optimizer state over the flat learnable vector.
///
/// `m` holds the momentum buffer (FedAvgM) or first moment (Adam); `v`
/// holds the second moment (Adam) or the squared-gradient accumulator
/// (AdaGrad). Both start at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerOptState {
    pub kind: ServerOptKind,
    pub server_lr: f64,
    /// Momentum coefficient for FedAvgM.
    pub momentum: f64,
    /// Adam first-moment decay.
    pub beta1: f64,
    /// Adam second-moment decay.
    pub beta2: f64,
    /// Adam / AdaGrad denominator offset.
    pub epsilon: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl ServerOptState {
    /// Zero-initialized optimizer state with conventional defaults
    /// (momentum 0.9, beta1 0.9, beta2 0.999, epsilon 1e-8).
    pub fn new(kind: ServerOptKind, server_lr: f64, dim: usize) -> Self {
        Self {
            kind,
            server_lr,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }
}

/// Sample `k` distinct client ids for a round, uniformly without
/// replacement, in draw order.
///
/// The draw stream is derived from `(seed, round_index)`, so every round
/// has its own substream and re-running any round in isolation
/// reproduces its selection.
pub fn sample_clients(
    n_clients: usize,
    k: usize,
    round_index: u64,
    seed: u64,
) -> Result<Vec<usize>> {
    if k == 0 || k > n_clients {
        return Err(Error::Config(format!(
            "cannot sample {k} of {n_clients} clients"
        )));
    }
    let mut rng = StreamRng::new(seed, "client-sampling").derive(round_index);
    Ok(rng.sample_indices(n_clients, k))
}

/// Weighted mean of client deltas: `sum_i (n_i / sum n) * delta_i`.
///
/// Updates are reduced in slice order; callers wanting arrival-order
/// independence must present them in a fixed client order.
pub fn aggregate_fedavg(updates: &[(Vec<f64>, usize)]) -> Result<Vec<f64>> {
    let (first, _) = updates
        .first()
        .ok_or_else(|| Error::Aggregation("no client updates to aggregate".into()))?;
    let dim = first.len();
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Aggregation("total sample weight is zero".into()));
    }
    let mut out = vec![0.0; dim];
    for (delta, n) in updates {
        if delta.len() != dim {
            return Err(Error::Aggregation(format!(
                "update length {} does not match {}",
                delta.len(),
                dim
            )));
        }
        let w = *n as f64 / total as f64;
        for (o, &d) in out.iter_mut().zip(delta) {
            *o += w * d;
        }
    }
    Ok(out)
}

/// Apply one server-optimizer step to the flat learnable vector.
///
/// The pseudo-gradient `delta` points from the global parameters toward
/// the weighted client mean; `-delta` plays the role of the gradient.
pub fn server_step(
    opt: &ServerOptState,
    params: &[f64],
    pseudo_grad: &[f64],
) -> Result<(Vec<f64>, ServerOptState)> {
    if params.len() != pseudo_grad.len() || params.len() != opt.m.len() {
        return Err(Error::Aggregation(format!(
            "shape mismatch: {} params, {} pseudo-gradient, {} optimizer state",
            params.len(),
            pseudo_grad.len(),
            opt.m.len()
        )));
    }
    let mut opt = opt.clone();
    let mut out = params.to_vec();
    opt.step += 1;
    match opt.kind {
        ServerOptKind::Sgd => {
            for (w, &d) in out.iter_mut().zip(pseudo_grad) {
                *w += opt.server_lr * d;
            }
        }
        ServerOptKind::FedAvgM => {
            for ((w, m), &d) in out.iter_mut().zip(&mut opt.m).zip(pseudo_grad) {
                *m = opt.momentum * *m + d;
                *w += opt.server_lr * *m;
            }
        }
        ServerOptKind::Adam => {
            let bias1 = 1.0 - power(opt.beta1, opt.step);
            let bias2 = 1.0 - power(opt.beta2, opt.step);
            for ((w, (m, v)), &d) in out
                .iter_mut()
                .zip(opt.m.iter_mut().zip(&mut opt.v))
                .zip(pseudo_grad)
            {
                let g = -d;
                *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
                *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *w -= opt.server_lr * m_hat / (libm::sqrt(v_hat) + opt.epsilon);
            }
        }
        ServerOptKind::AdaGrad => {
            for ((w, v), &d) in out.iter_mut().zip(&mut opt.v).zip(pseudo_grad) {
                let g = -d;
                *v += g * g;
                *w -= opt.server_lr * g / (libm::sqrt(*v) + opt.epsilon);
            }
        }
    }
    Ok((out, opt))
}

/// Integer power by repeated multiplication; keeps bias correction free
/// of transcendental rounding.
fn power(base: f64, exp: u64) -> f64 {
    let mut acc = 1.0;
    for _ in 0..exp {
        acc *= base;
    }
    acc
}

/// Partition a model state into its federated part (the flat learnables,
/// including the BN affine pair) and its local part (the BN running
/// statistics).
pub fn silobn_split(state: &ModelState) -> (Vec<f64>, BnStats) {
    (state.params.flatten(), state.bn_stats.clone())
}

/// Reassemble a model state from the two SiloBN parts.
pub fn silobn_merge(
    reference: &ModelParams,
    learnables: &[f64],
    bn_stats: BnStats,
) -> Result<ModelState> {
    let params = ModelParams::from_flat(
        reference.feature_dim,
        reference.hidden_dim,
        reference.n_classes,
        learnables,
    )?;
    Ok(ModelState { params, bn_stats })
}

/// Per-round knobs.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundConfig {
    pub clients_per_round: usize,
    pub local_epochs: usize,
    pub local_batch_size: usize,
    pub local_lr: f64,
    /// Keep BN statistics local to the clients.
    pub silobn: bool,
    /// Total rounds the orchestrator will run; informational here.
    pub rounds: usize,
    pub seed: u64,
}

/// What one round reports.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    pub round: u64,
    /// Sampled client ids in draw order.
    pub participants: Vec<usize>,
    /// Mean over participants of their mean local loss.
    pub mean_local_loss: f64,
}

/// Execute one federated round.
///
/// Each sampled client trains from the global learnables. In SiloBN
/// mode the client restores its own BN statistics (fresh (0, 1) on first
/// participation) and persists the updated ones; the server's statistics
/// are returned untouched. Otherwise clients start from the global
/// statistics, and the new global statistics are the sample-weighted
/// mean of the participants' results.
pub fn run_round(
    global: &ModelState,
    clients: &mut [ClientState],
    train: &Dataset,
    cfg: &RoundConfig,
    opt: &ServerOptState,
    round_index: u64,
    transform: &dyn SampleTransform,
) -> Result<(ModelState, ServerOptState, RoundMetrics)> {
    let participants = sample_clients(clients.len(), cfg.clients_per_round, round_index, cfg.seed)?;

    // fixed ascending-id order for training and aggregation, so arrival
    // order can never matter
    let mut ordered = participants.clone();
    ordered.sort_unstable();

    let global_flat = global.params.flatten();
    let seed_rng = StreamRng::new(cfg.seed, "local-train-seeds").derive(round_index);

    let mut updates: Vec<(Vec<f64>, usize)> = Vec::with_capacity(ordered.len());
    let mut stat_updates: Vec<(BnStats, usize)> = Vec::with_capacity(ordered.len());
    let mut loss_sum = 0.0;

    for &client_id in &ordered {
        let client = &clients[client_id];
        let start_stats = if cfg.silobn {
            client.bn_stats.clone().unwrap_or_else(|| {
                BnStats::fresh(global.params.hidden_dim, global.bn_stats.momentum)
            })
        } else {
            global.bn_stats.clone()
        };
        let samples: Vec<&_> = client
            .sample_indices
            .iter()
            .map(|&i| &train.samples[i])
            .collect();
        let outcome = local_train(
            &global.params,
            &start_stats,
            &samples,
            cfg.local_epochs,
            cfg.local_batch_size,
            cfg.local_lr,
            transform,
            seed_rng.derive(client_id as u64).to_seed(),
        )?;

        let delta: Vec<f64> = outcome
            .params
            .flatten()
            .iter()
            .zip(&global_flat)
            .map(|(new, old)| new - old)
            .collect();
        updates.push((delta, client.n_samples()));
        loss_sum += outcome.mean_loss;

        if cfg.silobn {
            clients[client_id].bn_stats = Some(outcome.bn_stats);
        } else {
            stat_updates.push((outcome.bn_stats, client.n_samples()));
        }
    }

    let pseudo_grad = aggregate_fedavg(&updates)?;
    let (new_flat, new_opt) = server_step(opt, &global_flat, &pseudo_grad)?;
    let new_params = ModelParams::from_flat(
        global.params.feature_dim,
        global.params.hidden_dim,
        global.params.n_classes,
        &new_flat,
    )?;

    let new_bn = if cfg.silobn {
        global.bn_stats.clone()
    } else {
        average_bn_stats(&stat_updates, &global.bn_stats)
    };

    let metrics = RoundMetrics {
        round: round_index,
        participants,
        mean_local_loss: loss_sum / ordered.len() as f64,
    };

    Ok((
        ModelState {
            params: new_params,
            bn_stats: new_bn,
        },
        new_opt,
        metrics,
    ))
}

/// Sample-weighted mean of running statistics, mirroring the parameter
/// aggregation weights. The step counter becomes the participants'
/// maximum.
fn average_bn_stats(updates: &[(BnStats, usize)], template: &BnStats) -> BnStats {
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    let dim = template.running_mean.len();
    let mut mean = vec![0.0; dim];
    let mut var = vec![0.0; dim];
    let mut steps = 0;
    for (stats, n) in updates {
        let w = *n as f64 / total as f64;
        for j in 0..dim {
            mean[j] += w * stats.running_mean[j];
            var[j] += w * stats.running_var[j];
        }
        steps = steps.max(stats.steps);
    }
    BnStats {
        running_mean: mean,
        running_var: var,
        momentum: template.momentum,
        steps,
    }
}
