//! Segmentation metrics and the two inference strategies.
//!
//! Both strategies evaluate the same learnables and differ only in where
//! the BN normalization statistics come from:
//!
//! - **standard** — exact two-pass mean/variance of the pre-BN
//!   activations over the entire test set;
//! - **by domain** — each seen-test image is routed to the client owning
//!   its domain and normalized with that client's local running
//!   statistics.
//!
//! Scores pool one confusion matrix across all evaluated images and
//! report mean intersection-over-union in percent.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{Dataset, DomainKey, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::federation::ClientState;
use crate::model::{forward, pre_bn_activations, BnStats, ForwardMode, ModelParams, PixelBatch};

/// C x C counts, rows = ground truth, columns = prediction; ignore
/// pixels are never counted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    /// Total counted (non-ignore) pixels.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Accumulate per-pixel argmax predictions against ground truth.
    ///
    /// `logits` is `n x n_classes`, row-major; argmax ties break toward
    /// the lowest class index. Ignore-labeled pixels leave the matrix
    /// unchanged.
    pub fn accumulate(&mut self, logits: &[f64], labels: &[i32]) -> Result<()> {
        if logits.len() != labels.len() * self.n_classes {
            return Err(Error::Evaluation(format!(
                "{} logits for {} labels of {} classes",
                logits.len(),
                labels.len(),
                self.n_classes
            )));
        }
        for (i, &label) in labels.iter().enumerate() {
            if label == IGNORE_LABEL {
                continue;
            }
            if label < 0 || label as usize >= self.n_classes {
                return Err(Error::Evaluation(format!(
                    "pixel {i} has label {label} outside [0, {})",
                    self.n_classes
                )));
            }
            let row = &logits[i * self.n_classes..(i + 1) * self.n_classes];
            let mut best = 0;
            for (c, &z) in row.iter().enumerate() {
                if z > row[best] {
                    best = c;
                }
            }
            self.counts[label as usize * self.n_classes + best] += 1;
        }
        Ok(())
    }

    /// Merge another matrix by elementwise addition.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes != self.n_classes {
            return Err(Error::Evaluation(format!(
                "cannot merge a {}-class matrix into a {}-class one",
                other.n_classes, self.n_classes
            )));
        }
        for (a, &b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Which inference strategy produced a result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Standard,
    ByDomain,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Standard => "standard",
            Strategy::ByDomain => "by_domain",
        }
    }
}

/// Per-class IoU (percent; `None` for classes absent from both truth and
/// prediction) plus their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean IoU in percent over the classes with a defined IoU.
    pub miou: f64,
    pub n_images: usize,
    pub strategy: Strategy,
}

/// Per-class intersection-over-union and their mean, in percent.
///
/// `IoU_c = TP_c / (TP_c + FP_c + FN_c)`; classes with a zero denominator
/// are excluded from the mean.
pub fn miou(matrix: &ConfusionMatrix) -> Result<(Vec<Option<f64>>, f64)> {
    if matrix.total() == 0 {
        return Err(Error::Evaluation(
            "confusion matrix has no counted pixels".into(),
        ));
    }
    let c_dim = matrix.n_classes();
    let mut per_class = Vec::with_capacity(c_dim);
    let mut sum = 0.0;
    let mut defined = 0usize;
    for c in 0..c_dim {
        let tp = matrix.count(c, c);
        let fp: u64 = (0..c_dim)
            .filter(|&t| t != c)
            .map(|t| matrix.count(t, c))
            .sum();
        let fn_: u64 = (0..c_dim)
            .filter(|&p| p != c)
            .map(|p| matrix.count(c, p))
            .sum();
        let denom = tp + fp + fn_;
        if denom == 0 {
            per_class.push(None);
        } else {
            let iou = 100.0 * tp as f64 / denom as f64;
            per_class.push(Some(iou));
            sum += iou;
            defined += 1;
        }
    }
    Ok((per_class, sum / defined as f64))
}

fn require_features(dataset: &Dataset) -> Result<()> {
    for sample in &dataset.samples {
        if !sample.has_features() {
            return Err(Error::Evaluation(format!(
                "sample '{}' has no features and cannot be evaluated",
                sample.id
            )));
        }
    }
    Ok(())
}

/// Exact mean and biased variance of the pre-BN activations over every
/// pixel of the dataset, computed in two passes.
pub fn test_set_statistics(params: &ModelParams, test: &Dataset) -> Result<BnStats> {
    if test.is_empty() {
        return Err(Error::Evaluation("test set is empty".into()));
    }
    require_features(test)?;
    let h_dim = params.hidden_dim;
    let mut mean = vec![0.0; h_dim];
    let mut total = 0usize;
    for sample in &test.samples {
        let h = pre_bn_activations(params, &sample.features);
        let n = sample.n_pixels();
        for i in 0..n {
            for j in 0..h_dim {
                mean[j] += h[i * h_dim + j];
            }
        }
        total += n;
    }
    for m in &mut mean {
        *m /= total as f64;
    }
    let mut var = vec![0.0; h_dim];
    for sample in &test.samples {
        let h = pre_bn_activations(params, &sample.features);
        for i in 0..sample.n_pixels() {
            for j in 0..h_dim {
                let d = h[i * h_dim + j] - mean[j];
                var[j] += d * d;
            }
        }
    }
    for v in &mut var {
        *v /= total as f64;
    }
    Ok(BnStats {
        running_mean: mean,
        running_var: var,
        momentum: 1.0,
        steps: 1,
    })
}

/// Evaluate one image with the given statistics, chunking pixels by
/// `batch_size` (eval-mode rows are independent, so chunking never
/// changes the outcome).
fn eval_image(
    params: &ModelParams,
    stats: &BnStats,
    features: &[f64],
    labels: &[i32],
    batch_size: usize,
    matrix: &mut ConfusionMatrix,
) -> Result<()> {
    let f_dim = params.feature_dim;
    let n = labels.len();
    let chunk = batch_size.max(1);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let batch = PixelBatch::new(
            features[start * f_dim..end * f_dim].to_vec(),
            labels[start..end].to_vec(),
            f_dim,
        )?;
        let pass = forward(params, stats, &batch, ForwardMode::Eval)?;
        matrix.accumulate(&pass.logits, &batch.labels)?;
        start = end;
    }
    Ok(())
}

/// Standard strategy: normalize with statistics computed directly from
/// the test set itself, then score every image.
pub fn eval_standard(
    params: &ModelParams,
    test: &Dataset,
    batch_size: usize,
) -> Result<EvalResult> {
    let stats = test_set_statistics(params, test)?;
    let mut matrix = ConfusionMatrix::new(params.n_classes);
    for sample in &test.samples {
        eval_image(
            params,
            &stats,
            &sample.features,
            &sample.labels,
            batch_size,
            &mut matrix,
        )?;
    }
    let (per_class_iou, miou) = miou(&matrix)?;
    Ok(EvalResult {
        per_class_iou,
        miou,
        n_images: test.len(),
        strategy: Strategy::Standard,
    })
}

/// By-domain strategy: route each seen-test image to the client owning
/// its domain and normalize with that client's local statistics; pool
/// one confusion matrix across all images.
///
/// Requires a one-domain-per-client layout (the heterogeneous
/// distribution) with every owner having participated at least once.
pub fn eval_by_domain(
    params: &ModelParams,
    clients: &[ClientState],
    seen_test: &Dataset,
    batch_size: usize,
) -> Result<EvalResult> {
    if seen_test.is_empty() {
        return Err(Error::Evaluation("test set is empty".into()));
    }
    require_features(seen_test)?;

    let mut owner_of: alloc::collections::BTreeMap<DomainKey, usize> =
        alloc::collections::BTreeMap::new();
    for client in clients {
        for &domain in &client.domains {
            if owner_of.insert(domain, client.id).is_some() {
                return Err(Error::Routing(format!(
                    "domain ({}, {}, {}) is owned by more than one client",
                    domain.weather, domain.viewpoint, domain.town
                )));
            }
        }
    }

    let mut matrix = ConfusionMatrix::new(params.n_classes);
    for sample in &seen_test.samples {
        let &owner = owner_of.get(&sample.domain).ok_or_else(|| {
            Error::Routing(format!(
                "test image '{}' has domain ({}, {}, {}) with no owning client",
                sample.id, sample.domain.weather, sample.domain.viewpoint, sample.domain.town
            ))
        })?;
        let stats = clients[owner].bn_stats.as_ref().ok_or_else(|| {
            Error::UninitializedStats(format!(
                "client {owner} owns domain ({}, {}, {}) but never participated",
                sample.domain.weather, sample.domain.viewpoint, sample.domain.town
            ))
        })?;
        eval_image(
            params,
            stats,
            &sample.features,
            &sample.labels,
            batch_size,
            &mut matrix,
        )?;
    }
    let (per_class_iou, miou) = miou(&matrix)?;
    Ok(EvalResult {
        per_class_iou,
        miou,
        n_images: seen_test.len(),
        strategy: Strategy::ByDomain,
    })
}
