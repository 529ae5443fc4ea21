//! Client dataset partitioning and label-skewness reporting.
//!
//! Three distributions assign training samples to clients:
//!
//! - **uniform** — a seeded permutation sliced by a size plan; on a full
//!   domain grid whose plan matches the domain count, each client instead
//!   receives exactly one image per domain;
//! - **heterogeneous** — one client per domain, holding that domain's
//!   samples;
//! - **class imbalance** — iteratively allocates the images containing
//!   the currently rarest class, maximizing label skewness across
//!   clients.
//!
//! [`skewness_report`] quantifies the result: for every class, the
//! distribution of per-client pixel shares among the clients that hold at
//! least one pixel of that class.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{class_presence, Dataset, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Which client distribution produced a partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistributionKind {
    Uniform,
    Heterogeneous,
    ClassImbalance,
}

impl DistributionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DistributionKind::Uniform => "uniform",
            DistributionKind::Heterogeneous => "heterogeneous",
            DistributionKind::ClassImbalance => "class_imbalance",
        }
    }
}

/// An ordered assignment of training samples to clients.
///
/// Every training sample id appears in exactly one client and no client
/// is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub clients: Vec<Vec<String>>,
    pub kind: DistributionKind,
    pub seed: u64,
}

impl Partition {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }
}

/// Desired per-client sample counts; sizes sum to the training-set
/// cardinality.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SizePlan {
    pub sizes: Vec<usize>,
}

/// How [`make_size_plan`] distributes the training set across clients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizePlanMode {
    /// Sizes differ by at most one.
    Equal,
    /// Every size drawn in `[min, max]`, then rebalanced to the exact
    /// total; introduces quantity skewness.
    Range { min: usize, max: usize },
}

/// Tie-break rule for the class-imbalance argmin selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TieBreak {
    LowestClassIndex,
}

/// Build a size plan for `n_clients` clients over `n_train` samples.
pub fn make_size_plan(
    n_train: usize,
    n_clients: usize,
    mode: SizePlanMode,
    seed: u64,
) -> Result<SizePlan> {
    if n_clients == 0 {
        return Err(Error::Config("size plan needs at least one client".into()));
    }
    match mode {
        SizePlanMode::Equal => {
            if n_train < n_clients {
                return Err(Error::Config(format!(
                    "cannot split {n_train} samples into {n_clients} non-empty clients"
                )));
            }
            let base = n_train / n_clients;
            let rem = n_train % n_clients;
            let sizes = (0..n_clients)
                .map(|i| if i < rem { base + 1 } else { base })
                .collect();
            Ok(SizePlan { sizes })
        }
        SizePlanMode::Range { min, max } => {
            if min == 0 || min > max {
                return Err(Error::Config(format!("invalid size range [{min}, {max}]")));
            }
            if n_clients * min > n_train || n_clients * max < n_train {
                return Err(Error::Config(format!(
                    "range [{min}, {max}] with {n_clients} clients cannot sum to {n_train}"
                )));
            }
            let mut rng = StreamRng::new(seed, "size-plan");
            let span = (max - min + 1) as u64;
            let mut sizes: Vec<usize> = (0..n_clients)
                .map(|_| min + rng.below(span) as usize)
                .collect();
            // rebalance one unit at a time toward the exact total
            let mut sum: usize = sizes.iter().sum();
            while sum != n_train {
                let grow = sum < n_train;
                let adjustable: Vec<usize> = sizes
                    .iter()
                    .enumerate()
                    .filter(|(_, &s)| if grow { s < max } else { s > min })
                    .map(|(i, _)| i)
                    .collect();
                let i = adjustable[rng.below(adjustable.len() as u64) as usize];
                if grow {
                    sizes[i] += 1;
                    sum += 1;
                } else {
                    sizes[i] -= 1;
                    sum -= 1;
                }
            }
            Ok(SizePlan { sizes })
        }
    }
}

fn check_plan(train: &Dataset, plan: &SizePlan) -> Result<()> {
    let total: usize = plan.sizes.iter().sum();
    if total != train.len() {
        return Err(Error::Config(format!(
            "size plan sums to {total} but the training set holds {} samples",
            train.len()
        )));
    }
    if plan.sizes.contains(&0) {
        return Err(Error::Config("size plan contains an empty client".into()));
    }
    Ok(())
}

/// Partition `train` by slicing a seeded uniform permutation by the plan
/// sizes.
///
/// When the training set is a full domain grid and every plan size
/// equals the domain count (with every domain holding exactly one image
/// per client), the draw is constrained so that each client receives
/// exactly one image from each domain.
pub fn partition_uniform(train: &Dataset, plan: &SizePlan, seed: u64) -> Result<Partition> {
    check_plan(train, plan)?;
    let mut rng = StreamRng::new(seed, "uniform-partition");

    let mut by_domain: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for (i, s) in train.samples.iter().enumerate() {
        by_domain.entry(s.domain).or_default().push(i);
    }
    let n_domains = by_domain.len();
    let n_clients = plan.sizes.len();
    let one_per_domain = plan.sizes.iter().all(|&s| s == n_domains)
        && by_domain.values().all(|v| v.len() == n_clients);

    let clients: Vec<Vec<usize>> = if one_per_domain {
        let mut clients = vec![Vec::with_capacity(n_domains); n_clients];
        for (key, members) in &by_domain {
            let mut deck = members.clone();
            rng.derive(train.grid.linear_index(*key) as u64)
                .shuffle(&mut deck);
            for (client, &idx) in deck.iter().enumerate() {
                clients[client].push(idx);
            }
        }
        clients
    } else {
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        let mut clients = Vec::with_capacity(n_clients);
        let mut cursor = 0;
        for &size in &plan.sizes {
            clients.push(order[cursor..cursor + size].to_vec());
            cursor += size;
        }
        clients
    };

    Ok(Partition {
        clients: to_ids(train, clients),
        kind: DistributionKind::Uniform,
        seed,
    })
}

/// One client per distinct domain, holding exactly that domain's
/// samples, ordered by domain index. Deterministic; no randomness.
pub fn partition_heterogeneous(train: &Dataset) -> Result<Partition> {
    if train.is_empty() {
        return Err(Error::Config(
            "cannot partition an empty training set".into(),
        ));
    }
    let mut by_domain: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for (i, s) in train.samples.iter().enumerate() {
        by_domain.entry(s.domain).or_default().push(i);
    }
    Ok(Partition {
        clients: to_ids(train, by_domain.into_values().collect()),
        kind: DistributionKind::Heterogeneous,
        seed: 0,
    })
}

/// Allocate samples to clients so that label skewness is maximized.
///
/// Maintains, for every class `c`, the set of still-unallocated samples
/// in which `c` appears. Each client is filled by repeatedly selecting
/// the non-empty set of minimum cardinality (ties broken by lowest class
/// index), drawing as many of its samples as the client still needs
/// (uniformly, without replacement, one seeded draw per sample), and
/// removing the drawn samples from every class set. The rarest-class set
/// is re-selected after every draw batch, so allocation never stalls.
pub fn partition_class_imbalance(
    train: &Dataset,
    plan: &SizePlan,
    seed: u64,
    tie_break: TieBreak,
) -> Result<Partition> {
    check_plan(train, plan)?;
    let TieBreak::LowestClassIndex = tie_break;

    let mut classes_of: Vec<Vec<usize>> = Vec::with_capacity(train.len());
    let mut remaining_with: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); train.n_classes];
    for (i, sample) in train.samples.iter().enumerate() {
        let present: Vec<usize> = class_presence(sample).into_iter().collect();
        if present.is_empty() {
            return Err(Error::Data(format!(
                "sample '{}' has no labeled class and cannot be allocated",
                sample.id
            )));
        }
        for &c in &present {
            remaining_with[c].insert(i);
        }
        classes_of.push(present);
    }

    let mut rng = StreamRng::new(seed, "class-imbalance");
    let mut clients: Vec<Vec<usize>> = Vec::with_capacity(plan.sizes.len());

    for &target in &plan.sizes {
        let mut client = Vec::with_capacity(target);
        while client.len() < target {
            let rarest = remaining_with
                .iter()
                .enumerate()
                .filter(|(_, set)| !set.is_empty())
                .min_by_key(|(_, set)| set.len())
                .map(|(c, _)| c)
                .unwrap_or_else(|| {
                    // removal is synchronized across all class sets, so
                    // they can only all be empty once every sample is
                    // allocated -- and the plan sums to the sample count
                    unreachable!("unallocated samples remain but every class set is empty")
                });
            let take = (target - client.len()).min(remaining_with[rarest].len());
            for _ in 0..take {
                let rank = rng.below(remaining_with[rarest].len() as u64) as usize;
                let chosen = *remaining_with[rarest].iter().nth(rank).unwrap();
                for &c in &classes_of[chosen] {
                    remaining_with[c].remove(&chosen);
                }
                client.push(chosen);
            }
        }
        clients.push(client);
    }

    Ok(Partition {
        clients: to_ids(train, clients),
        kind: DistributionKind::ClassImbalance,
        seed,
    })
}

fn to_ids(train: &Dataset, clients: Vec<Vec<usize>>) -> Vec<Vec<String>> {
    clients
        .into_iter()
        .map(|members| {
            members
                .into_iter()
                .map(|i| train.samples[i].id.clone())
                .collect()
        })
        .collect()
}

/// Per-class distribution of client pixel shares.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSkew {
    pub class: usize,
    /// Number of clients holding at least one pixel of the class.
    pub clients_with_class: usize,
    /// Share of the class's pixels held by each contributing client, in
    /// client order; sums to 1.
    pub shares: Vec<f64>,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub iqr: f64,
}

/// Label-skewness summary of a partition: one [`ClassSkew`] per class.
#[derive(Clone, Debug, PartialEq)]
pub struct SkewnessReport {
    pub per_class: Vec<ClassSkew>,
}

impl SkewnessReport {
    /// Mean interquartile range over classes held by at least one client.
    pub fn mean_iqr(&self) -> f64 {
        let present: Vec<&ClassSkew> = self
            .per_class
            .iter()
            .filter(|c| c.clients_with_class > 0)
            .collect();
        if present.is_empty() {
            return 0.0;
        }
        present.iter().map(|c| c.iqr).sum::<f64>() / present.len() as f64
    }
}

/// Linearly interpolated quantile of an ascending-sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// Tally per-class pixel counts per client and summarize the share
/// distributions.
///
/// Counts are raw non-ignore pixels from the label grids. For each class,
/// shares are computed over the clients holding at least one pixel of
/// that class, relative to the class total across all clients. The
/// partition must cover the training set.
pub fn skewness_report(partition: &Partition, train: &Dataset, n_classes: usize) -> SkewnessReport {
    let index = train.index_by_id();
    let n_clients = partition.clients.len();
    let mut counts = vec![vec![0u64; n_classes]; n_clients];

    for (client, members) in partition.clients.iter().enumerate() {
        for id in members {
            let &i = index
                .get(id.as_str())
                .expect("partition references a sample id absent from the training set");
            for &label in &train.samples[i].labels {
                if label != IGNORE_LABEL {
                    counts[client][label as usize] += 1;
                }
            }
        }
    }

    let per_class = (0..n_classes)
        .map(|class| {
            let total: u64 = (0..n_clients).map(|cl| counts[cl][class]).sum();
            let shares: Vec<f64> = (0..n_clients)
                .filter(|&cl| counts[cl][class] > 0)
                .map(|cl| counts[cl][class] as f64 / total as f64)
                .collect();
            if shares.is_empty() {
                return ClassSkew {
                    class,
                    clients_with_class: 0,
                    shares,
                    q1: 0.0,
                    median: 0.0,
                    q3: 0.0,
                    iqr: 0.0,
                };
            }
            debug_assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let mut sorted = shares.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q1 = quantile(&sorted, 0.25);
            let median = quantile(&sorted, 0.5);
            let q3 = quantile(&sorted, 0.75);
            ClassSkew {
                class,
                clients_with_class: shares.len(),
                shares,
                q1,
                median,
                q3,
                iqr: q3 - q1,
            }
        })
        .collect();

    SkewnessReport { per_class }
}

/// Headline numbers of a partition.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionSummary {
    pub n_clients: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub mean_size: f64,
    pub kind: DistributionKind,
}

pub fn partition_summary(partition: &Partition) -> PartitionSummary {
    let sizes: Vec<usize> = partition.clients.iter().map(|c| c.len()).collect();
    let total: usize = sizes.iter().sum();
    PartitionSummary {
        n_clients: sizes.len(),
        min_size: sizes.iter().copied().min().unwrap_or(0),
        max_size: sizes.iter().copied().max().unwrap_or(0),
        mean_size: total as f64 / sizes.len() as f64,
        kind: partition.kind,
    }
}
