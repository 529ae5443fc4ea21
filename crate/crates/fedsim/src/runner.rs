//! Configuration-driven experiment orchestration.
//!
//! A run is a grid of independent cells, one per `(seed, server_lr)`
//! pair. Every cell executes the full pipeline — dataset, split,
//! partition, federated rounds, evaluation — and writes its artifacts
//! into its own directory, so cells can run concurrently without
//! coordination. The cross-seed summary is produced after all cells
//! finish. Everything is reproducible from `(config, seed)`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use fedsim_core::dataset::{axis_predicate, split_seen_unseen, Dataset, SplitResult};
use fedsim_core::eval::{eval_by_domain, eval_standard, EvalResult, Strategy};
use fedsim_core::federation::{
    init_clients, run_round, ClientState, ModelState, RoundConfig, ServerOptState,
};
use fedsim_core::model::{init_model, BnStats, IdentityTransform, ModelParams, SampleTransform};
use fedsim_core::partition::{
    make_size_plan, partition_class_imbalance, partition_heterogeneous, partition_summary,
    partition_uniform, skewness_report, Partition, SkewnessReport, TieBreak,
};

use crate::config::{DatasetConfig, DistributionConfig, ExperimentConfig};
use crate::error::{AppError, Result};
use crate::manifest::load_manifest;
use crate::report::{
    eval_csv, figure_csv, partition_summary_csv, partition_tsv, round_log_csv, skewness_csv,
    summary_csv, write_checkpoint, write_client_stats, EvalRow, RoundLogRow, SummaryRow,
};

/// Resolve the configured transform name.
pub fn resolve_transform(name: &str) -> Result<Box<dyn SampleTransform + Sync>> {
    match name {
        "identity" => Ok(Box::new(IdentityTransform)),
        other => Err(AppError::config(format!(
            "federation.transform: unknown transform '{other}'"
        ))),
    }
}

/// Build the dataset for one sweep seed.
pub fn build_dataset(cfg: &ExperimentConfig, sweep_seed: u64) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetConfig::Synthetic { .. } => {
            let spec = cfg.dataset.synthetic_spec(sweep_seed).unwrap();
            Ok(fedsim_core::dataset::generate_synthetic(&spec)?)
        }
        DatasetConfig::Manifest { path, n_classes } => load_manifest(Path::new(path), *n_classes),
    }
}

/// Apply the configured seen/unseen split.
pub fn build_split(cfg: &ExperimentConfig, data: &Dataset, sweep_seed: u64) -> Result<SplitResult> {
    let (axis, index) = cfg.split.partition.resolve(data.grid);
    Ok(split_seen_unseen(
        data,
        axis_predicate(axis, index),
        cfg.split.seen_per_domain,
        sweep_seed,
    )?)
}

/// Build the configured client partition over the training set.
pub fn build_partition(
    cfg: &ExperimentConfig,
    train: &Dataset,
    sweep_seed: u64,
) -> Result<Partition> {
    let partition = match &cfg.distribution {
        DistributionConfig::Heterogeneous => partition_heterogeneous(train)?,
        DistributionConfig::Uniform { n_clients, plan } => {
            let plan = make_size_plan(train.len(), *n_clients, *plan, sweep_seed)?;
            partition_uniform(train, &plan, sweep_seed)?
        }
        DistributionConfig::ClassImbalance { n_clients, plan } => {
            let plan = make_size_plan(train.len(), *n_clients, *plan, sweep_seed)?;
            partition_class_imbalance(train, &plan, sweep_seed, TieBreak::LowestClassIndex)?
        }
    };
    if cfg.federation.clients_per_round > partition.n_clients() {
        return Err(AppError::config(format!(
            "federation.clients_per_round: {} exceeds the partition's {} clients",
            cfg.federation.clients_per_round,
            partition.n_clients()
        )));
    }
    Ok(partition)
}

/// The deterministic pipeline state shared by the stage-level commands.
pub struct Prepared {
    pub data: Dataset,
    pub split: SplitResult,
    pub partition: Partition,
}

pub fn prepare(cfg: &ExperimentConfig, sweep_seed: u64) -> Result<Prepared> {
    let data = build_dataset(cfg, sweep_seed)?;
    let split = build_split(cfg, &data, sweep_seed)?;
    let partition = build_partition(cfg, &split.train, sweep_seed)?;
    Ok(Prepared {
        data,
        split,
        partition,
    })
}

/// Write the partition artifacts (assignment, summary, skewness report).
pub fn write_partition_artifacts(dir: &Path, prepared: &Prepared, n_classes: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let report = skewness_report(&prepared.partition, &prepared.split.train, n_classes);
    write_text(
        &dir.join("partition.tsv"),
        &partition_tsv(&prepared.partition),
    )?;
    write_text(
        &dir.join("partition_summary.csv"),
        &partition_summary_csv(&partition_summary(&prepared.partition)),
    )?;
    write_text(&dir.join("skewness.csv"), &skewness_csv(&report))?;
    Ok(())
}

/// Result of federated training for one cell.
pub struct TrainedCell {
    pub global: ModelState,
    pub clients: Vec<ClientState>,
}

/// Run the configured number of federated rounds and write the round
/// log, the parameter checkpoint, and the client statistics.
pub fn train_cell(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    seed: u64,
    server_lr: f64,
    dir: &Path,
) -> Result<TrainedCell> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let f = &cfg.federation;
    let train = &prepared.split.train;
    if train.feature_dim == 0 {
        return Err(AppError::config(
            "dataset: training requires per-pixel features (feature_dim >= 1)",
        ));
    }

    let mut clients = init_clients(&prepared.partition, train)?;
    let (params, _) = init_model(train.feature_dim, f.hidden_dim, train.n_classes, seed);
    let mut global = ModelState {
        params,
        bn_stats: BnStats::fresh(f.hidden_dim, f.bn_momentum),
    };
    let mut opt = ServerOptState::new(f.optimizer, server_lr, global.params.n_learnables());
    opt.momentum = f.server_momentum;

    let round_cfg = RoundConfig {
        clients_per_round: f.clients_per_round,
        local_epochs: f.local_epochs,
        local_batch_size: f.local_batch_size,
        local_lr: f.local_lr,
        silobn: f.silobn,
        rounds: f.rounds,
        seed,
    };
    let transform = resolve_transform(&f.transform)?;

    let mut log_rows = Vec::with_capacity(f.rounds);
    for round in 0..f.rounds as u64 {
        let (next_global, next_opt, metrics) = run_round(
            &global,
            &mut clients,
            train,
            &round_cfg,
            &opt,
            round,
            transform.as_ref(),
        )?;
        global = next_global;
        opt = next_opt;
        log_rows.push(RoundLogRow {
            round: metrics.round,
            participants: metrics.participants,
            mean_local_loss: metrics.mean_local_loss,
            server_opt: f.optimizer.as_str(),
            server_lr,
            silobn: f.silobn,
        });
    }

    write_text(&dir.join("round_log.csv"), &round_log_csv(&log_rows))?;
    write_checkpoint(&dir.join("checkpoint.txt"), &global.params)?;
    write_client_stats(&dir.join("client_stats.tsv"), &clients)?;

    Ok(TrainedCell { global, clients })
}

/// Evaluate the configured strategies and write `eval.csv`.
///
/// The standard strategy scores the seen test set and, when non-empty,
/// the unseen one; the by-domain strategy applies to the seen set only.
pub fn evaluate_cell(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    params: &ModelParams,
    clients: &[ClientState],
    seed: u64,
    dir: &Path,
) -> Result<Vec<EvalRow>> {
    let batch = cfg.evaluation.eval_batch_size;
    let mut rows = Vec::new();
    for strategy in &cfg.evaluation.strategies {
        match strategy {
            Strategy::Standard => {
                let seen = eval_standard(params, &prepared.split.seen_test, batch)?;
                rows.push(to_row(seen, "seen", seed));
                if !prepared.split.unseen_test.is_empty() {
                    let unseen = eval_standard(params, &prepared.split.unseen_test, batch)?;
                    rows.push(to_row(unseen, "unseen", seed));
                }
            }
            Strategy::ByDomain => {
                let seen = eval_by_domain(params, clients, &prepared.split.seen_test, batch)?;
                rows.push(to_row(seen, "seen", seed));
            }
        }
    }
    write_text(&dir.join("eval.csv"), &eval_csv(&rows))?;
    Ok(rows)
}

fn to_row(result: EvalResult, split: &'static str, seed: u64) -> EvalRow {
    EvalRow {
        strategy: result.strategy,
        split,
        seed,
        miou: result.miou,
        per_class: result.per_class_iou,
    }
}

/// Directory for one sweep cell.
pub fn cell_dir(out_root: &Path, seed: u64, server_lr: f64) -> PathBuf {
    out_root.join(format!("seed{seed}_lr{server_lr}"))
}

/// Execute one full cell: pipeline, training, evaluation, artifacts.
pub fn run_cell(
    cfg: &ExperimentConfig,
    seed: u64,
    server_lr: f64,
    out_root: &Path,
) -> Result<Vec<EvalRow>> {
    let dir = cell_dir(out_root, seed, server_lr);
    let prepared = prepare(cfg, seed)?;
    write_partition_artifacts(&dir, &prepared, cfg.dataset.n_classes())?;
    let trained = train_cell(cfg, &prepared, seed, server_lr, &dir)?;
    evaluate_cell(
        cfg,
        &prepared,
        &trained.global.params,
        &trained.clients,
        seed,
        &dir,
    )
}

/// Run the whole sweep and write the cross-seed summary.
///
/// Cells are independent and run in parallel; `FEDSIM_THREADS` caps the
/// worker count. Returns the summary rows.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<Vec<SummaryRow>> {
    cfg.validate()?;
    fs::create_dir_all(out_root).map_err(|e| AppError::io(out_root, e))?;

    let cells: Vec<(u64, f64)> = cfg
        .run
        .seeds
        .iter()
        .flat_map(|&seed| cfg.federation.server_lrs.iter().map(move |&lr| (seed, lr)))
        .collect();

    let run_all = || -> Result<Vec<Vec<EvalRow>>> {
        cells
            .par_iter()
            .map(|&(seed, lr)| run_cell(cfg, seed, lr, out_root))
            .collect()
    };

    let results: Vec<Vec<EvalRow>> = match threads_from_env()? {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| AppError::config(format!("FEDSIM_THREADS: {e}")))?;
            pool.install(run_all)?
        }
        None => run_all()?,
    };

    let summary = summarize(cfg, &results);
    write_text(&out_root.join("summary.csv"), &summary_csv(&summary))?;
    Ok(summary)
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("FEDSIM_THREADS") {
        Ok(value) => {
            let n: usize = value.parse().map_err(|_| {
                AppError::config(format!(
                    "FEDSIM_THREADS: '{value}' is not a positive integer"
                ))
            })?;
            if n == 0 {
                return Err(AppError::config("FEDSIM_THREADS: must be >= 1"));
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

/// Mean and sample standard deviation per `(server_lr, strategy, split)`
/// across seeds, flagging the best learning rate.
///
/// The ranking metric is the seen-split mean of the first configured
/// strategy; ties resolve to the earlier entry in the `server_lr` list.
fn summarize(cfg: &ExperimentConfig, results: &[Vec<EvalRow>]) -> Vec<SummaryRow> {
    let all_rows: Vec<&EvalRow> = results.iter().flatten().collect();
    let lrs = &cfg.federation.server_lrs;

    let mut rows = Vec::new();
    for &lr in lrs {
        for strategy in &cfg.evaluation.strategies {
            for split in ["seen", "unseen"] {
                let scores: Vec<f64> = cfg
                    .run
                    .seeds
                    .iter()
                    .flat_map(|&seed| {
                        all_rows
                            .iter()
                            .filter(move |r| {
                                r.seed == seed
                                    && r.strategy == *strategy
                                    && r.split == split
                                    && in_cell(results, cfg, seed, lr, r)
                            })
                            .map(|r| r.miou)
                    })
                    .collect();
                if scores.is_empty() {
                    continue;
                }
                let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                let std = if scores.len() > 1 {
                    let ss: f64 = scores.iter().map(|s| (s - mean) * (s - mean)).sum();
                    (ss / (scores.len() - 1) as f64).sqrt()
                } else {
                    0.0
                };
                rows.push(SummaryRow {
                    server_lr: lr,
                    strategy: *strategy,
                    split,
                    miou_mean: mean,
                    miou_std: std,
                    best: false,
                });
            }
        }
    }

    let primary = cfg.evaluation.strategies[0];
    let mut best_lr = lrs[0];
    let mut best_score = f64::NEG_INFINITY;
    for &lr in lrs {
        if let Some(row) = rows
            .iter()
            .find(|r| r.server_lr == lr && r.strategy == primary && r.split == "seen")
        {
            if row.miou_mean > best_score {
                best_score = row.miou_mean;
                best_lr = lr;
            }
        }
    }
    for row in &mut rows {
        row.best = row.server_lr == best_lr;
    }
    rows
}

/// Whether an eval row belongs to the `(seed, lr)` cell. Rows only carry
/// the seed, so locate the row's parent result set by cell order.
fn in_cell(
    results: &[Vec<EvalRow>],
    cfg: &ExperimentConfig,
    seed: u64,
    lr: f64,
    row: &EvalRow,
) -> bool {
    let mut idx = 0;
    for &s in &cfg.run.seeds {
        for &l in &cfg.federation.server_lrs {
            if s == seed && l == lr {
                return results[idx].iter().any(|r| std::ptr::eq(r, row));
            }
            idx += 1;
        }
    }
    false
}

/// One distribution's skewness report, tagged with the training ids it
/// was computed over.
pub struct DistributionReport {
    pub name: String,
    pub report: SkewnessReport,
    pub train_ids: BTreeSet<String>,
}

/// Long-format comparison data across client distributions.
///
/// Requires at least two distributions, all evaluated on the same
/// training set.
pub fn emit_figure_data(entries: &[DistributionReport]) -> Result<String> {
    if entries.len() < 2 {
        return Err(AppError::Comparison(
            "need at least two distributions to compare".into(),
        ));
    }
    for entry in &entries[1..] {
        if entry.train_ids != entries[0].train_ids {
            return Err(AppError::Comparison(format!(
                "distribution '{}' was computed on a different training set than '{}'",
                entry.name, entries[0].name
            )));
        }
    }
    let pairs: Vec<(String, &SkewnessReport)> = entries
        .iter()
        .map(|e| (e.name.clone(), &e.report))
        .collect();
    Ok(figure_csv(&pairs))
}

/// Compare label skewness across the three distributions on this
/// config's training set and write `figure_skewness.csv`.
///
/// Uniform and class-imbalance use the configured plan when the config
/// declares one, and otherwise an equal plan over as many clients as
/// the heterogeneous distribution produces.
pub fn run_report(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<()> {
    let data = build_dataset(cfg, seed)?;
    let split = build_split(cfg, &data, seed)?;
    let train = &split.train;
    let n_classes = cfg.dataset.n_classes();

    let het = partition_heterogeneous(train)?;
    let (n_clients, plan_mode) = match &cfg.distribution {
        DistributionConfig::Uniform { n_clients, plan }
        | DistributionConfig::ClassImbalance { n_clients, plan } => (*n_clients, *plan),
        DistributionConfig::Heterogeneous => {
            (het.n_clients(), fedsim_core::partition::SizePlanMode::Equal)
        }
    };
    let plan = make_size_plan(train.len(), n_clients, plan_mode, seed)?;
    let uniform = partition_uniform(train, &plan, seed)?;
    let imbalance = partition_class_imbalance(train, &plan, seed, TieBreak::LowestClassIndex)?;

    let ids: BTreeSet<String> = train.samples.iter().map(|s| s.id.clone()).collect();
    let entries = vec![
        DistributionReport {
            name: "uniform".into(),
            report: skewness_report(&uniform, train, n_classes),
            train_ids: ids.clone(),
        },
        DistributionReport {
            name: "heterogeneous".into(),
            report: skewness_report(&het, train, n_classes),
            train_ids: ids.clone(),
        },
        DistributionReport {
            name: "class_imbalance".into(),
            report: skewness_report(&imbalance, train, n_classes),
            train_ids: ids,
        },
    ];
    let csv = emit_figure_data(&entries)?;
    fs::create_dir_all(out_dir).map_err(|e| AppError::io(out_dir, e))?;
    write_text(&out_dir.join("figure_skewness.csv"), &csv)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedsim_core::partition::ClassSkew;

    fn mini_config() -> ExperimentConfig {
        ExperimentConfig::parse(
            "\
[dataset]
source = synthetic
grid = 2 2 2
images_per_domain = 4
height = 4
width = 4
feature_dim = 3
n_classes = 4
class_separation = 1.5
domain_shift = 1
noise_std = 0.3
zeroed_classes_per_town = 1

[split]
partition = country
seen_per_domain = 1

[distribution]
kind = heterogeneous

[federation]
rounds = 2
clients_per_round = 2
local_epochs = 1
local_batch_size = 8
local_lr = 0.05
hidden_dim = 5
bn_momentum = 0.1
silobn = true
optimizer = sgd
server_lr = 1
transform = identity

[evaluation]
strategies = standard
eval_batch_size = 32

[run]
seeds = 0 1
output_dir = out
",
        )
        .unwrap()
    }

    #[test]
    fn pipeline_counts_match_the_config() {
        let cfg = mini_config();
        let prepared = prepare(&cfg, 0).unwrap();
        assert_eq!(prepared.data.len(), 2 * 2 * 2 * 4);
        // country split drops town 1: 4 retained domains
        assert_eq!(prepared.split.unseen_test.len(), 4 * 4);
        assert_eq!(prepared.split.seen_test.len(), 4);
        assert_eq!(prepared.split.train.len(), 4 * 3);
        assert_eq!(prepared.partition.n_clients(), 4);
    }

    #[test]
    fn run_experiment_writes_every_artifact() {
        let cfg = mini_config();
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&cfg, dir.path()).unwrap();
        assert!(!summary.is_empty());
        assert!(summary.iter().any(|r| r.best));

        for seed in [0, 1] {
            let cell = cell_dir(dir.path(), seed, 1.0);
            for file in [
                "round_log.csv",
                "eval.csv",
                "partition.tsv",
                "partition_summary.csv",
                "skewness.csv",
                "checkpoint.txt",
                "client_stats.tsv",
            ] {
                assert!(cell.join(file).exists(), "missing {file} for seed {seed}");
            }
        }
        assert!(dir.path().join("summary.csv").exists());

        // every declared (seed, lr, strategy) triple has its result rows
        let eval_text = fs::read_to_string(cell_dir(dir.path(), 0, 1.0).join("eval.csv")).unwrap();
        let standard_rows = eval_text
            .lines()
            .filter(|l| l.starts_with("standard,"))
            .count();
        assert_eq!(standard_rows, 2, "seen + unseen rows:\n{eval_text}");
    }

    #[test]
    fn rerunning_a_config_is_byte_identical() {
        let cfg = mini_config();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run_experiment(&cfg, dir_a.path()).unwrap();
        run_experiment(&cfg, dir_b.path()).unwrap();
        for seed in [0, 1] {
            for file in ["round_log.csv", "eval.csv", "skewness.csv"] {
                let a = fs::read(cell_dir(dir_a.path(), seed, 1.0).join(file)).unwrap();
                let b = fs::read(cell_dir(dir_b.path(), seed, 1.0).join(file)).unwrap();
                assert_eq!(a, b, "{file} differs for seed {seed}");
            }
        }
        let a = fs::read(dir_a.path().join("summary.csv")).unwrap();
        let b = fs::read(dir_b.path().join("summary.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clients_per_round_is_checked_against_the_partition() {
        let mut cfg = mini_config();
        cfg.federation.clients_per_round = 99;
        let err = run_cell(&cfg, 0, 1.0, tempfile::tempdir().unwrap().path()).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }

    fn dummy_report() -> SkewnessReport {
        SkewnessReport {
            per_class: vec![ClassSkew {
                class: 0,
                clients_with_class: 1,
                shares: vec![1.0],
                q1: 1.0,
                median: 1.0,
                q3: 1.0,
                iqr: 0.0,
            }],
        }
    }

    #[test]
    fn figure_data_needs_two_distributions_on_the_same_train_set() {
        let ids: BTreeSet<String> = ["a".to_string()].into();
        let single = vec![DistributionReport {
            name: "uniform".into(),
            report: dummy_report(),
            train_ids: ids.clone(),
        }];
        assert!(matches!(
            emit_figure_data(&single),
            Err(AppError::Comparison(_))
        ));

        let other_ids: BTreeSet<String> = ["b".to_string()].into();
        let mismatched = vec![
            DistributionReport {
                name: "uniform".into(),
                report: dummy_report(),
                train_ids: ids.clone(),
            },
            DistributionReport {
                name: "class_imbalance".into(),
                report: dummy_report(),
                train_ids: other_ids,
            },
        ];
        assert!(matches!(
            emit_figure_data(&mismatched),
            Err(AppError::Comparison(_))
        ));

        let good = vec![
            DistributionReport {
                name: "uniform".into(),
                report: dummy_report(),
                train_ids: ids.clone(),
            },
            DistributionReport {
                name: "class_imbalance".into(),
                report: dummy_report(),
                train_ids: ids,
            },
        ];
        let csv = emit_figure_data(&good).unwrap();
        assert!(csv.starts_with("distribution,class,clients_with_class,q1,median,q3\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn report_emits_figure_csv_with_bounded_client_counts() {
        let cfg = mini_config();
        let dir = tempfile::tempdir().unwrap();
        run_report(&cfg, 0, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("figure_skewness.csv")).unwrap();
        let mut lines = text.lines();
        lines.next().unwrap();
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            let clients_with_class: usize = fields[2].parse().unwrap();
            assert!(clients_with_class <= 4, "{line}");
        }
    }
}
