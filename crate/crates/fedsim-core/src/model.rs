//! A minimal per-pixel classifier with one batch-normalization layer.
//!
//! Architecture: `Linear(F -> Hd) -> BatchNorm -> ReLU -> Linear(Hd -> C)`
//! applied independently to every pixel's feature vector. Forward and
//! backward passes are explicit so the BN running statistics are
//! first-class, inspectable state rather than hidden layer internals.
//!
//! Conventions, which the numeric oracles depend on:
//! - batch variance is the biased (1/N) estimator, both for
//!   normalization and for running-stat updates;
//! - running stats update as `new = (1 - m) * old + m * batch`;
//! - ignore-labeled pixels contribute zero gradient and are excluded
//!   from the loss mean, but participate in BN batch statistics;
//! - the flattened parameter order is `w1, b1, gamma, beta, w2, b2`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{Sample, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Epsilon added to the variance before taking the square root.
pub const BN_EPSILON: f64 = 1e-5;

/// Default exponential-moving-average momentum for running statistics.
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

/// Learnable parameters: two dense layers plus the BN affine pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
    /// `feature_dim x hidden_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// BN scale.
    pub gamma: Vec<f64>,
    /// BN shift.
    pub beta: Vec<f64>,
    /// `hidden_dim x n_classes`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ModelParams {
    /// All-zero parameters of the given shape (gradient accumulator).
    pub fn zeros(feature_dim: usize, hidden_dim: usize, n_classes: usize) -> Self {
        Self {
            feature_dim,
            hidden_dim,
            n_classes,
            w1: vec![0.0; feature_dim * hidden_dim],
            b1: vec![0.0; hidden_dim],
            gamma: vec![0.0; hidden_dim],
            beta: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim * n_classes],
            b2: vec![0.0; n_classes],
        }
    }

    /// Number of learnable scalars.
    pub fn n_learnables(&self) -> usize {
        self.w1.len()
            + self.b1.len()
            + self.gamma.len()
            + self.beta.len()
            + self.w2.len()
            + self.b2.len()
    }

    /// Flatten in the documented order `w1, b1, gamma, beta, w2, b2`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.n_learnables());
        flat.extend_from_slice(&self.w1);
        flat.extend_from_slice(&self.b1);
        flat.extend_from_slice(&self.gamma);
        flat.extend_from_slice(&self.beta);
        flat.extend_from_slice(&self.w2);
        flat.extend_from_slice(&self.b2);
        flat
    }

    /// Rebuild parameters from a flat vector in the documented order.
    pub fn from_flat(
        feature_dim: usize,
        hidden_dim: usize,
        n_classes: usize,
        flat: &[f64],
    ) -> Result<Self> {
        let mut params = Self::zeros(feature_dim, hidden_dim, n_classes);
        if flat.len() != params.n_learnables() {
            return Err(Error::Aggregation(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                params.n_learnables()
            )));
        }
        let mut cursor = 0;
        for field in [
            &mut params.w1,
            &mut params.b1,
            &mut params.gamma,
            &mut params.beta,
            &mut params.w2,
            &mut params.b2,
        ] {
            let len = field.len();
            field.copy_from_slice(&flat[cursor..cursor + len]);
            cursor += len;
        }
        Ok(params)
    }

    pub fn all_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Batch-normalization running statistics; the state SiloBN keeps local.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// EMA momentum in `(0, 1]`.
    pub momentum: f64,
    /// Number of train-mode updates applied so far.
    pub steps: u64,
}

impl BnStats {
    /// Freshly initialized statistics: mean 0, variance 1, zero steps.
    pub fn fresh(hidden_dim: usize, momentum: f64) -> Self {
        Self {
            running_mean: vec![0.0; hidden_dim],
            running_var: vec![1.0; hidden_dim],
            momentum,
            steps: 0,
        }
    }
}

/// A flat batch of pixels: `n` feature vectors with one label each.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelBatch {
    pub features: Vec<f64>,
    pub labels: Vec<i32>,
    pub feature_dim: usize,
}

impl PixelBatch {
    pub fn new(features: Vec<f64>, labels: Vec<i32>, feature_dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Batch("batch has no pixels".into()));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::Batch(format!(
                "batch has {} feature values for {} pixels of dim {}",
                features.len(),
                labels.len(),
                feature_dim
            )));
        }
        Ok(Self {
            features,
            labels,
            feature_dim,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }
}

/// Whether BN normalizes by batch statistics (train) or by running
/// statistics (eval).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    Eval,
}

/// Intermediates kept by a train-mode forward for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct TrainCache {
    pub(crate) xhat: Vec<f64>,
    pub(crate) inv_std: Vec<f64>,
    pub(crate) pre_relu: Vec<f64>,
    pub(crate) hidden: Vec<f64>,
}

/// Result of a forward pass: per-pixel logits plus the (possibly
/// updated) running statistics.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub logits: Vec<f64>,
    pub bn_stats: BnStats,
    pub(crate) cache: Option<TrainCache>,
}

/// Seeded model initialization.
///
/// Weights are uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`; biases and
/// beta start at zero, gamma at one; running statistics at (0, 1).
pub fn init_model(
    feature_dim: usize,
    hidden_dim: usize,
    n_classes: usize,
    seed: u64,
) -> (ModelParams, BnStats) {
    let mut rng = StreamRng::new(seed, "model-init");
    let mut uniform_scaled = |n: usize, fan_in: usize| -> Vec<f64> {
        let scale = 1.0 / libm::sqrt(fan_in as f64);
        (0..n)
            .map(|_| (2.0 * rng.next_f64() - 1.0) * scale)
            .collect()
    };
    let params = ModelParams {
        feature_dim,
        hidden_dim,
        n_classes,
        w1: uniform_scaled(feature_dim * hidden_dim, feature_dim),
        b1: vec![0.0; hidden_dim],
        gamma: vec![1.0; hidden_dim],
        beta: vec![0.0; hidden_dim],
        w2: uniform_scaled(hidden_dim * n_classes, hidden_dim),
        b2: vec![0.0; n_classes],
    };
    (params, BnStats::fresh(hidden_dim, DEFAULT_BN_MOMENTUM))
}

/// Pre-BN activations `x . w1 + b1` for a flat feature buffer.
pub fn pre_bn_activations(params: &ModelParams, features: &[f64]) -> Vec<f64> {
    let f_dim = params.feature_dim;
    let h_dim = params.hidden_dim;
    let n = features.len() / f_dim;
    let mut h = vec![0.0; n * h_dim];
    for i in 0..n {
        let row = &features[i * f_dim..(i + 1) * f_dim];
        let out = &mut h[i * h_dim..(i + 1) * h_dim];
        out.copy_from_slice(&params.b1);
        for (f, &x) in row.iter().enumerate() {
            let w_row = &params.w1[f * h_dim..(f + 1) * h_dim];
            for (j, &w) in w_row.iter().enumerate() {
                out[j] += x * w;
            }
        }
    }
    h
}

/// Forward pass.
///
/// Train mode normalizes by the batch's own mean and biased variance and
/// advances the running statistics by one EMA step; it requires at least
/// two pixels. Eval mode normalizes by the given running statistics and
/// leaves them untouched.
pub fn forward(
    params: &ModelParams,
    bn_stats: &BnStats,
    batch: &PixelBatch,
    mode: ForwardMode,
) -> Result<ForwardPass> {
    if batch.feature_dim != params.feature_dim {
        return Err(Error::Batch(format!(
            "batch feature dim {} does not match model feature dim {}",
            batch.feature_dim, params.feature_dim
        )));
    }
    let n = batch.n();
    if mode == ForwardMode::Train && n < 2 {
        return Err(Error::Batch(
            "train-mode forward needs at least 2 pixels for a batch variance".into(),
        ));
    }

    let h_dim = params.hidden_dim;
    let c_dim = params.n_classes;
    let h = pre_bn_activations(params, &batch.features);

    let (mean, var, new_stats) = match mode {
        ForwardMode::Train => {
            let mut mean = vec![0.0; h_dim];
            for i in 0..n {
                for j in 0..h_dim {
                    mean[j] += h[i * h_dim + j];
                }
            }
            for m in &mut mean {
                *m /= n as f64;
            }
            let mut var = vec![0.0; h_dim];
            for i in 0..n {
                for j in 0..h_dim {
                    let d = h[i * h_dim + j] - mean[j];
                    var[j] += d * d;
                }
            }
            for v in &mut var {
                *v /= n as f64;
            }
            let m = bn_stats.momentum;
            let mut stats = bn_stats.clone();
            for j in 0..h_dim {
                stats.running_mean[j] = (1.0 - m) * stats.running_mean[j] + m * mean[j];
                stats.running_var[j] = (1.0 - m) * stats.running_var[j] + m * var[j];
            }
            stats.steps += 1;
            (mean, var, stats)
        }
        ForwardMode::Eval => (
            bn_stats.running_mean.clone(),
            bn_stats.running_var.clone(),
            bn_stats.clone(),
        ),
    };

    let inv_std: Vec<f64> = var
        .iter()
        .map(|&v| 1.0 / libm::sqrt(v + BN_EPSILON))
        .collect();

    let mut xhat = vec![0.0; n * h_dim];
    let mut pre_relu = vec![0.0; n * h_dim];
    let mut hidden = vec![0.0; n * h_dim];
    for i in 0..n {
        for j in 0..h_dim {
            let x = (h[i * h_dim + j] - mean[j]) * inv_std[j];
            xhat[i * h_dim + j] = x;
            let a = params.gamma[j] * x + params.beta[j];
            pre_relu[i * h_dim + j] = a;
            hidden[i * h_dim + j] = if a > 0.0 { a } else { 0.0 };
        }
    }

    let mut logits = vec![0.0; n * c_dim];
    for i in 0..n {
        let out = &mut logits[i * c_dim..(i + 1) * c_dim];
        out.copy_from_slice(&params.b2);
        for j in 0..h_dim {
            let r = hidden[i * h_dim + j];
            if r != 0.0 {
                let w_row = &params.w2[j * c_dim..(j + 1) * c_dim];
                for (c, &w) in w_row.iter().enumerate() {
                    out[c] += r * w;
                }
            }
        }
    }

    let cache = match mode {
        ForwardMode::Train => Some(TrainCache {
            xhat,
            inv_std,
            pre_relu,
            hidden,
        }),
        ForwardMode::Eval => None,
    };

    Ok(ForwardPass {
        logits,
        bn_stats: new_stats,
        cache,
    })
}

/// Loss, gradients, and updated running statistics for one train step.
#[derive(Clone, Debug)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grads: ModelParams,
    pub bn_stats: BnStats,
}

/// Mean cross-entropy over non-ignore pixels, with exact backpropagation
/// through the train-mode BN normalization.
pub fn loss_and_grad(
    params: &ModelParams,
    bn_stats: &BnStats,
    batch: &PixelBatch,
) -> Result<LossAndGrad> {
    let c_dim = params.n_classes;
    for (i, &label) in batch.labels.iter().enumerate() {
        if label != IGNORE_LABEL && (label < 0 || label as usize >= c_dim) {
            return Err(Error::Data(format!(
                "pixel {i} has label {label} outside [0, {c_dim})"
            )));
        }
    }
    let n = batch.n();
    let n_valid = batch.labels.iter().filter(|&&l| l != IGNORE_LABEL).count();
    if n_valid == 0 {
        return Err(Error::Loss("every pixel in the batch is ignored".into()));
    }

    let pass = forward(params, bn_stats, batch, ForwardMode::Train)?;
    let cache = pass
        .cache
        .as_ref()
        .expect("train forward caches intermediates");
    let h_dim = params.hidden_dim;
    let f_dim = params.feature_dim;

    // softmax cross-entropy over the valid pixels
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; n * c_dim];
    for i in 0..n {
        let label = batch.labels[i];
        if label == IGNORE_LABEL {
            continue;
        }
        let row = &pass.logits[i * c_dim..(i + 1) * c_dim];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &z in row {
            denom += libm::exp(z - max);
        }
        let log_denom = libm::log(denom);
        loss += log_denom + max - row[label as usize];
        let d_row = &mut dlogits[i * c_dim..(i + 1) * c_dim];
        for c in 0..c_dim {
            let p = libm::exp(row[c] - max) / denom;
            d_row[c] = p / n_valid as f64;
        }
        d_row[label as usize] -= 1.0 / n_valid as f64;
    }
    loss /= n_valid as f64;

    let mut grads = ModelParams::zeros(f_dim, h_dim, c_dim);

    // output layer
    let mut d_hidden = vec![0.0; n * h_dim];
    for i in 0..n {
        let d_row = &dlogits[i * c_dim..(i + 1) * c_dim];
        for (g, &d) in grads.b2.iter_mut().zip(d_row) {
            *g += d;
        }
        for j in 0..h_dim {
            let r = cache.hidden[i * h_dim + j];
            let mut acc = 0.0;
            let w_row = &params.w2[j * c_dim..(j + 1) * c_dim];
            for c in 0..c_dim {
                grads.w2[j * c_dim + c] += r * d_row[c];
                acc += w_row[c] * d_row[c];
            }
            d_hidden[i * h_dim + j] = acc;
        }
    }

    // ReLU and BN affine
    let mut d_xhat = vec![0.0; n * h_dim];
    for i in 0..n {
        for j in 0..h_dim {
            let idx = i * h_dim + j;
            let da = if cache.pre_relu[idx] > 0.0 {
                d_hidden[idx]
            } else {
                0.0
            };
            grads.beta[j] += da;
            grads.gamma[j] += da * cache.xhat[idx];
            d_xhat[idx] = da * params.gamma[j];
        }
    }

    // BN normalization (biased variance): per channel j,
    // dh_i = inv_std/N * (N*dxhat_i - sum(dxhat) - xhat_i * sum(dxhat*xhat))
    let mut sum_dxhat = vec![0.0; h_dim];
    let mut sum_dxhat_xhat = vec![0.0; h_dim];
    for i in 0..n {
        for j in 0..h_dim {
            let idx = i * h_dim + j;
            sum_dxhat[j] += d_xhat[idx];
            sum_dxhat_xhat[j] += d_xhat[idx] * cache.xhat[idx];
        }
    }
    let mut dh = vec![0.0; n * h_dim];
    for i in 0..n {
        for j in 0..h_dim {
            let idx = i * h_dim + j;
            dh[idx] = cache.inv_std[j] / n as f64
                * (n as f64 * d_xhat[idx] - sum_dxhat[j] - cache.xhat[idx] * sum_dxhat_xhat[j]);
        }
    }

    // input layer
    for i in 0..n {
        let x_row = &batch.features[i * f_dim..(i + 1) * f_dim];
        let dh_row = &dh[i * h_dim..(i + 1) * h_dim];
        for (g, &d) in grads.b1.iter_mut().zip(dh_row) {
            *g += d;
        }
        for (f, &x) in x_row.iter().enumerate() {
            let g_row = &mut grads.w1[f * h_dim..(f + 1) * h_dim];
            for j in 0..h_dim {
                g_row[j] += x * dh_row[j];
            }
        }
    }

    Ok(LossAndGrad {
        loss,
        grads,
        bn_stats: pass.bn_stats,
    })
}

/// Per-sample transform applied before pixels are batched; the plug
/// point for client-side input translation. Only the identity ships.
pub trait SampleTransform {
    fn apply(&self, sample: &Sample) -> Sample;
}

/// The default no-op transform.
pub struct IdentityTransform;

impl SampleTransform for IdentityTransform {
    fn apply(&self, sample: &Sample) -> Sample {
        sample.clone()
    }
}

/// Result of a local training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub bn_stats: BnStats,
    /// Mean per-batch loss over all epochs of the call.
    pub mean_loss: f64,
}

/// Plain SGD over a client's samples.
///
/// Per epoch, every pixel of every (transformed) sample is pooled and
/// visited in a seeded shuffled order, split into consecutive batches
/// of `batch_size` pixels; batches therefore mix pixels across the
/// client's images, so batch statistics reflect the client's overall
/// data mixture. A trailing single-pixel batch is merged into its
/// predecessor so the batch variance stays defined. Inputs are not
/// mutated.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    params: &ModelParams,
    bn_stats: &BnStats,
    samples: &[&Sample],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    transform: &dyn SampleTransform,
    seed: u64,
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::Data("client has no samples to train on".into()));
    }
    if batch_size < 2 {
        return Err(Error::Config("local batch_size must be >= 2".into()));
    }

    let f_dim = params.feature_dim;
    let mut pool_features: Vec<f64> = Vec::new();
    let mut pool_labels: Vec<i32> = Vec::new();
    for sample in samples {
        let sample = transform.apply(sample);
        if !sample.has_features() {
            return Err(Error::Data(format!(
                "sample '{}' has no features and cannot be trained on",
                sample.id
            )));
        }
        pool_features.extend_from_slice(&sample.features);
        pool_labels.extend_from_slice(&sample.labels);
    }
    let n_pool = pool_labels.len();

    let rng = StreamRng::new(seed, "local-train");
    let mut params = params.clone();
    let mut stats = bn_stats.clone();
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;

    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..n_pool).collect();
        rng.derive(epoch as u64).shuffle(&mut order);

        let mut starts: Vec<usize> = (0..n_pool).step_by(batch_size).collect();
        // merge a trailing singleton batch into its predecessor
        if starts.len() > 1 && n_pool - starts[starts.len() - 1] < 2 {
            starts.pop();
        }
        for (k, &start) in starts.iter().enumerate() {
            let end = if k + 1 < starts.len() {
                starts[k + 1]
            } else {
                n_pool
            };
            let picked = &order[start..end];
            let mut features = Vec::with_capacity(picked.len() * f_dim);
            let mut labels = Vec::with_capacity(picked.len());
            for &p in picked {
                features.extend_from_slice(&pool_features[p * f_dim..(p + 1) * f_dim]);
                labels.push(pool_labels[p]);
            }
            let batch = PixelBatch::new(features, labels, f_dim)?;
            let step = loss_and_grad(&params, &stats, &batch)?;
            stats = step.bn_stats;
            loss_sum += step.loss;
            loss_count += 1;
            apply_sgd(&mut params, &step.grads, lr);
        }
    }

    Ok(TrainOutcome {
        params,
        bn_stats: stats,
        mean_loss: loss_sum / loss_count as f64,
    })
}

fn apply_sgd(params: &mut ModelParams, grads: &ModelParams, lr: f64) {
    for (p, g) in [
        (&mut params.w1, &grads.w1),
        (&mut params.b1, &grads.b1),
        (&mut params.gamma, &grads.gamma),
        (&mut params.beta, &grads.beta),
        (&mut params.w2, &grads.w2),
        (&mut params.b2, &grads.b2),
    ] {
        for (p_i, &g_i) in p.iter_mut().zip(g) {
            *p_i -= lr * g_i;
        }
    }
}
