//! Acceptance gate: one test per criterion, each printing a `[PASS]`
//! line with the measured values when it holds.
//!
//! Structural counts, oracle equivalences, and tolerance checks pin the
//! engine's behavior; the directional experiments verify that the
//! label-skew and statistics-locality effects emerge on the shipped
//! reference configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fedsim_core::dataset::{
    axis_predicate, class_presence, generate_synthetic, split_seen_unseen, Dataset, DomainAxis,
    DomainKey, GridDims, Sample, SyntheticSpec,
};
use fedsim_core::eval::{miou, ConfusionMatrix};
use fedsim_core::federation::{
    init_clients, run_round, server_step, ModelState, RoundConfig, ServerOptKind, ServerOptState,
};
use fedsim_core::model::{
    init_model, local_train, loss_and_grad, BnStats, IdentityTransform, ModelParams, PixelBatch,
    DEFAULT_BN_MOMENTUM,
};
use fedsim_core::partition::{
    make_size_plan, partition_class_imbalance, partition_heterogeneous, partition_uniform,
    skewness_report, SizePlan, SizePlanMode, TieBreak,
};
use fedsim_core::rng::StreamRng;

use fedsim::config::{DistributionConfig, ExperimentConfig};
use fedsim::runner;

fn reference_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.cfg");
    ExperimentConfig::from_file(&path).expect("reference config parses")
}

/// Label-only synthetic dataset with the reference grid but tiny images.
fn structural_grid_dataset() -> Dataset {
    generate_synthetic(&SyntheticSpec {
        grid: GridDims::new(3, 5, 7),
        images_per_domain: 60,
        height: 2,
        width: 2,
        feature_dim: 1,
        n_classes: 4,
        class_separation: 1.0,
        domain_shift: 1.0,
        noise_std: 0.1,
        zeroed_classes_per_town: 1,
        profiles: None,
        seed: 0,
    })
    .unwrap()
}

#[test]
fn criterion_01_structural_counts() {
    let started = Instant::now();
    let data = structural_grid_dataset();
    assert_eq!(data.len(), 6300, "105 domains x 60 images");

    // country: unseen = last town (15 domains), 90 retained x 48 train
    let country = data.grid.n_towns - 1;
    let split = split_seen_unseen(&data, axis_predicate(DomainAxis::Town, country), 12, 0).unwrap();
    let het = partition_heterogeneous(&split.train).unwrap();
    assert_eq!(het.n_clients(), 90, "country heterogeneous clients");
    assert!(het.clients.iter().all(|c| c.len() == 48), "48 img/client");

    // bus: unseen = last viewpoint -> 84 retained; rainy: last weather -> 70
    let bus = data.grid.n_viewpoints - 1;
    let split =
        split_seen_unseen(&data, axis_predicate(DomainAxis::Viewpoint, bus), 12, 0).unwrap();
    assert_eq!(
        split.train.domains_present().len(),
        84,
        "bus retained domains"
    );
    let rainy = data.grid.n_weathers - 1;
    let split =
        split_seen_unseen(&data, axis_predicate(DomainAxis::Weather, rainy), 12, 0).unwrap();
    assert_eq!(
        split.train.domains_present().len(),
        70,
        "rainy retained domains"
    );

    // 2975-sample training set split across 146 clients of 10..=45 images
    let plan = make_size_plan(2975, 146, SizePlanMode::Range { min: 10, max: 45 }, 0).unwrap();
    assert_eq!(plan.sizes.len(), 146);
    assert_eq!(plan.sizes.iter().sum::<usize>(), 2975);
    assert!(plan.sizes.iter().all(|&s| (10..=45).contains(&s)));
    let urban = generate_synthetic(&SyntheticSpec {
        grid: GridDims::new(1, 1, 7),
        images_per_domain: 425,
        height: 4,
        width: 4,
        feature_dim: 1,
        n_classes: 8,
        class_separation: 1.0,
        domain_shift: 1.0,
        noise_std: 0.1,
        zeroed_classes_per_town: 2,
        profiles: None,
        seed: 1,
    })
    .unwrap();
    assert_eq!(urban.len(), 2975);
    let partition =
        partition_class_imbalance(&urban, &plan, 0, TieBreak::LowestClassIndex).unwrap();
    assert_eq!(partition.n_clients(), 146);
    for (client, &size) in partition.clients.iter().zip(&plan.sizes) {
        assert_eq!(client.len(), size);
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!(
        "[PASS] criterion 1: country 90x48, bus 84, rainy 70 retained; 146 clients in [10,45] summing 2975 ({elapsed:?})"
    );
}

/// Straightforward re-simulation of the allocation algorithm with plain
/// vectors and linear scans, independent of the library's data
/// structures.
fn simulate_class_imbalance(train: &Dataset, plan: &SizePlan, seed: u64) -> Vec<Vec<String>> {
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); train.n_classes];
    for (i, sample) in train.samples.iter().enumerate() {
        for c in class_presence(sample) {
            pools[c].push(i);
        }
    }
    let mut rng = StreamRng::new(seed, "class-imbalance");
    let mut clients = Vec::new();
    for &target in &plan.sizes {
        let mut client: Vec<usize> = Vec::new();
        while client.len() < target {
            let mut rarest: Option<usize> = None;
            for (c, pool) in pools.iter().enumerate() {
                if pool.is_empty() {
                    continue;
                }
                if rarest.is_none_or(|r| pool.len() < pools[r].len()) {
                    rarest = Some(c);
                }
            }
            let rarest = rarest.expect("some pool must remain non-empty");
            let take = (target - client.len()).min(pools[rarest].len());
            for _ in 0..take {
                let rank = rng.below(pools[rarest].len() as u64) as usize;
                let chosen = pools[rarest][rank];
                for pool in &mut pools {
                    pool.retain(|&s| s != chosen);
                }
                client.push(chosen);
            }
        }
        clients.push(client);
    }
    clients
        .into_iter()
        .map(|m| m.into_iter().map(|i| train.samples[i].id.clone()).collect())
        .collect()
}

fn labels_dataset(label_sets: &[Vec<i32>], n_classes: usize) -> Dataset {
    let samples = label_sets
        .iter()
        .enumerate()
        .map(|(i, labels)| Sample {
            id: format!("i{}", i + 1),
            domain: DomainKey {
                weather: 0,
                viewpoint: 0,
                town: 0,
            },
            height: 1,
            width: labels.len(),
            features: Vec::new(),
            labels: labels.clone(),
        })
        .collect();
    Dataset::new(samples, n_classes, 0, GridDims::new(1, 1, 1)).unwrap()
}

#[test]
fn criterion_02_allocation_oracle_equivalence() {
    let started = Instant::now();

    // the worked 4-image example: i1{A}, i2{A,B}, i3{B,C}, i4{A,C}, plan [2,2]
    let worked = labels_dataset(&[vec![0], vec![0, 1], vec![1, 2], vec![0, 2]], 3);
    let plan = SizePlan { sizes: vec![2, 2] };
    let got = partition_class_imbalance(&worked, &plan, 0, TieBreak::LowestClassIndex).unwrap();
    let client1: BTreeSet<&str> = got.clients[0].iter().map(String::as_str).collect();
    assert_eq!(client1, BTreeSet::from(["i2", "i3"]));
    assert_eq!(got.clients[1], vec!["i4".to_string(), "i1".to_string()]);
    assert_eq!(got.clients, simulate_class_imbalance(&worked, &plan, 0));

    // 50 seeded random instances with <= 6 images and <= 3 classes
    for seed in 0..50u64 {
        let mut rng = StreamRng::new(seed, "acceptance-instances");
        let n_images = 1 + rng.below(6) as usize;
        let n_classes = 1 + rng.below(3) as usize;
        let label_sets: Vec<Vec<i32>> = (0..n_images)
            .map(|_| {
                let mut present: Vec<i32> = (0..n_classes as i32)
                    .filter(|_| rng.next_f64() < 0.5)
                    .collect();
                if present.is_empty() {
                    present.push(rng.below(n_classes as u64) as i32);
                }
                present
            })
            .collect();
        let data = labels_dataset(&label_sets, n_classes);
        let n_clients = 1 + rng.below(n_images as u64) as usize;
        let mut sizes = vec![1usize; n_clients];
        for _ in 0..n_images - n_clients {
            let i = rng.below(n_clients as u64) as usize;
            sizes[i] += 1;
        }
        let plan = SizePlan { sizes };
        let got =
            partition_class_imbalance(&data, &plan, seed, TieBreak::LowestClassIndex).unwrap();
        let expect = simulate_class_imbalance(&data, &plan, seed);
        assert_eq!(got.clients, expect, "instance seed {seed}");
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!("[PASS] criterion 2: worked example and 50 random instances match the step-by-step simulation ({elapsed:?})");
}

#[test]
fn criterion_03_skewness_directionality() {
    let started = Instant::now();
    let cfg = reference_config();
    let spec = cfg.dataset.synthetic_spec(0).unwrap();
    let data = generate_synthetic(&spec).unwrap();
    let country = data.grid.n_towns - 1;
    let split = split_seen_unseen(
        &data,
        axis_predicate(DomainAxis::Town, country),
        cfg.split.seen_per_domain,
        0,
    )
    .unwrap();
    let train = &split.train;
    let n_classes = data.n_classes;

    let plan = make_size_plan(train.len(), 90, SizePlanMode::Equal, 0).unwrap();
    let uniform = skewness_report(
        &partition_uniform(train, &plan, 0).unwrap(),
        train,
        n_classes,
    );
    let imbalance = skewness_report(
        &partition_class_imbalance(train, &plan, 0, TieBreak::LowestClassIndex).unwrap(),
        train,
        n_classes,
    );

    let mut wider = 0usize;
    let mut comparable = 0usize;
    for (u, c) in uniform.per_class.iter().zip(&imbalance.per_class) {
        if u.clients_with_class == 0 || c.clients_with_class == 0 {
            continue;
        }
        comparable += 1;
        if c.iqr > u.iqr {
            wider += 1;
        }
    }
    let fraction = wider as f64 / comparable as f64;
    assert!(
        fraction >= 0.75,
        "class-imbalance IQR wider for only {wider}/{comparable} classes"
    );
    assert!(
        imbalance.mean_iqr() > uniform.mean_iqr(),
        "mean IQR {} vs {}",
        imbalance.mean_iqr(),
        uniform.mean_iqr()
    );

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "[PASS] criterion 3: class-imbalance IQR wider for {wider}/{comparable} classes; mean IQR {:.5} vs {:.5} ({elapsed:?})",
        imbalance.mean_iqr(),
        uniform.mean_iqr()
    );
}

/// Small heterogeneous federation over a 4-domain synthetic set.
fn small_federation() -> (
    Dataset,
    Vec<fedsim_core::federation::ClientState>,
    ModelState,
) {
    let data = generate_synthetic(&SyntheticSpec {
        grid: GridDims::new(1, 2, 2),
        images_per_domain: 3,
        height: 4,
        width: 4,
        feature_dim: 3,
        n_classes: 4,
        class_separation: 1.5,
        domain_shift: 1.0,
        noise_std: 0.3,
        zeroed_classes_per_town: 1,
        profiles: None,
        seed: 77,
    })
    .unwrap();
    let partition = partition_heterogeneous(&data).unwrap();
    let clients = init_clients(&partition, &data).unwrap();
    let (params, bn_stats) = init_model(3, 5, 4, 11);
    (data, clients, ModelState { params, bn_stats })
}

#[test]
fn criterion_04_fedavg_recovery() {
    let (train, mut clients, global) = small_federation();
    let cfg = RoundConfig {
        clients_per_round: clients.len(),
        local_epochs: 1,
        local_batch_size: 8,
        local_lr: 0.05,
        silobn: true,
        rounds: 1,
        seed: 5,
    };
    let opt = ServerOptState::new(ServerOptKind::Sgd, 1.0, global.params.n_learnables());
    let (new_global, _, _) = run_round(
        &global,
        &mut clients,
        &train,
        &cfg,
        &opt,
        0,
        &IdentityTransform,
    )
    .unwrap();

    // oracle: weighted mean of independently retrained client learnables
    let total: usize = clients.iter().map(|c| c.n_samples()).sum();
    let mut expect = vec![0.0; global.params.n_learnables()];
    for client in &clients {
        let samples: Vec<&Sample> = client
            .sample_indices
            .iter()
            .map(|&i| &train.samples[i])
            .collect();
        let outcome = local_train(
            &global.params,
            &BnStats::fresh(5, DEFAULT_BN_MOMENTUM),
            &samples,
            cfg.local_epochs,
            cfg.local_batch_size,
            cfg.local_lr,
            &IdentityTransform,
            StreamRng::new(cfg.seed, "local-train-seeds")
                .derive(0)
                .derive(client.id as u64)
                .to_seed(),
        )
        .unwrap();
        let w = client.n_samples() as f64 / total as f64;
        for (e, p) in expect.iter_mut().zip(outcome.params.flatten()) {
            *e += w * p;
        }
    }
    let mut max_err: f64 = 0.0;
    for (a, b) in new_global.params.flatten().iter().zip(&expect) {
        max_err = max_err.max((a - b).abs());
    }
    assert!(max_err < 1e-12, "max coordinate error {max_err}");
    println!("[PASS] criterion 4: full-participation sgd@1.0 equals the weighted client mean (max err {max_err:.2e})");
}

#[test]
fn criterion_05_server_optimizer_oracles() {
    // fedavgm with zero momentum must be sgd, bitwise, over 10 steps
    let mut rng = StreamRng::new(3, "acceptance-opt");
    let dim = 8;
    let mut sgd = ServerOptState::new(ServerOptKind::Sgd, 0.7, dim);
    let mut favgm = ServerOptState::new(ServerOptKind::FedAvgM, 0.7, dim);
    favgm.momentum = 0.0;
    let mut w_a: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let mut w_b = w_a.clone();
    for _ in 0..10 {
        let delta: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let (next_a, s) = server_step(&sgd, &w_a, &delta).unwrap();
        let (next_b, f) = server_step(&favgm, &w_b, &delta).unwrap();
        sgd = s;
        favgm = f;
        w_a = next_a;
        w_b = next_b;
        assert_eq!(w_a, w_b, "fedavgm(beta=0) diverged from sgd");
    }

    // adam: 3 steps on a fixed pseudo-gradient vs the hand recurrence
    let delta = vec![0.5, -1.0, 0.25];
    let lr = 0.1;
    let mut opt = ServerOptState::new(ServerOptKind::Adam, lr, 3);
    let mut w = vec![1.0, -2.0, 0.0];
    let mut m = [0.0; 3];
    let mut v = [0.0; 3];
    let mut expect = w.clone();
    for t in 1..=3i32 {
        let (next, o) = server_step(&opt, &w, &delta).unwrap();
        opt = o;
        w = next;
        for j in 0..3 {
            let g = -delta[j];
            m[j] = 0.9 * m[j] + 0.1 * g;
            v[j] = 0.999 * v[j] + 0.001 * g * g;
            let m_hat = m[j] / (1.0 - 0.9f64.powi(t));
            let v_hat = v[j] / (1.0 - 0.999f64.powi(t));
            expect[j] -= lr * m_hat / (v_hat.sqrt() + 1e-8);
            assert!(
                (w[j] - expect[j]).abs() < 1e-12,
                "adam step {t} coord {j}: {} vs {}",
                w[j],
                expect[j]
            );
        }
    }

    // adagrad likewise
    let delta = vec![2.0, -0.5];
    let mut opt = ServerOptState::new(ServerOptKind::AdaGrad, 0.5, 2);
    let mut w = vec![0.0, 0.0];
    let mut acc = [0.0; 2];
    let mut expect = w.clone();
    for t in 1..=3 {
        let (next, o) = server_step(&opt, &w, &delta).unwrap();
        opt = o;
        w = next;
        for j in 0..2 {
            let g = -delta[j];
            acc[j] += g * g;
            expect[j] -= 0.5 * g / (acc[j].sqrt() + 1e-8);
            assert!(
                (w[j] - expect[j]).abs() < 1e-12,
                "adagrad step {t} coord {j}: {} vs {}",
                w[j],
                expect[j]
            );
        }
    }

    println!("[PASS] criterion 5: fedavgm(beta=0) == sgd bitwise; adam and adagrad match hand recurrences within 1e-12");
}

#[test]
fn criterion_06_silobn_locality() {
    let cfg = reference_config();
    let prepared = runner::prepare(&cfg, 0).unwrap();
    let train = &prepared.split.train;
    let f = &cfg.federation;

    // the reference pipeline reproduces the country-split structure
    let summary = fedsim_core::partition::partition_summary(&prepared.partition);
    assert_eq!(summary.n_clients, 90);
    assert_eq!(summary.min_size, 48);
    assert_eq!(summary.max_size, 48);

    let mut clients = init_clients(&prepared.partition, train).unwrap();
    let (params, _) = init_model(train.feature_dim, f.hidden_dim, train.n_classes, 0);
    let fresh = BnStats::fresh(f.hidden_dim, f.bn_momentum);
    let mut global = ModelState {
        params,
        bn_stats: fresh.clone(),
    };
    let mut opt = ServerOptState::new(ServerOptKind::Sgd, 1.0, global.params.n_learnables());
    let round_cfg = RoundConfig {
        clients_per_round: f.clients_per_round,
        local_epochs: f.local_epochs,
        local_batch_size: f.local_batch_size,
        local_lr: f.local_lr,
        silobn: true,
        rounds: 20,
        seed: 0,
    };

    let mut divergence_by_round_5 = 0.0f64;
    for round in 0..20u64 {
        let (next_global, next_opt, _) = run_round(
            &global,
            &mut clients,
            train,
            &round_cfg,
            &opt,
            round,
            &IdentityTransform,
        )
        .unwrap();
        global = next_global;
        opt = next_opt;
        assert_eq!(
            global.bn_stats, fresh,
            "server BN statistics were written in round {round}"
        );
        if round == 4 {
            divergence_by_round_5 = max_pairwise_stat_distance(&clients);
        }
    }
    assert!(
        divergence_by_round_5 > 0.0,
        "client statistics did not diverge by round 5"
    );
    println!(
        "[PASS] criterion 6: server BN stats bitwise untouched over 20 rounds; client stats diverged by round 5 (max pairwise distance {divergence_by_round_5:.3})"
    );
}

fn max_pairwise_stat_distance(clients: &[fedsim_core::federation::ClientState]) -> f64 {
    let stats: Vec<&BnStats> = clients.iter().filter_map(|c| c.bn_stats.as_ref()).collect();
    let mut max = 0.0f64;
    for i in 0..stats.len() {
        for j in i + 1..stats.len() {
            for (a, b) in stats[i]
                .running_mean
                .iter()
                .chain(&stats[i].running_var)
                .zip(stats[j].running_mean.iter().chain(&stats[j].running_var))
            {
                max = max.max((a - b).abs());
            }
        }
    }
    max
}

#[test]
fn criterion_07_gradient_correctness() {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        // random parameters away from the init fixed points
        let (mut params, _) = init_model(3, 4, 3, 300 + seed);
        let mut prng = StreamRng::new(400 + seed, "acceptance-params");
        for field in [
            &mut params.w1,
            &mut params.b1,
            &mut params.gamma,
            &mut params.beta,
            &mut params.w2,
            &mut params.b2,
        ] {
            for v in field.iter_mut() {
                *v += 0.3 * prng.normal();
            }
        }
        let mut brng = StreamRng::new(500 + seed, "acceptance-batch");
        let n = 8;
        let features: Vec<f64> = (0..n * 3).map(|_| brng.normal()).collect();
        let labels: Vec<i32> = (0..n).map(|_| brng.below(3) as i32).collect();
        let batch = PixelBatch::new(features, labels, 3).unwrap();

        let stats = BnStats::fresh(4, DEFAULT_BN_MOMENTUM);
        let analytic = loss_and_grad(&params, &stats, &batch)
            .unwrap()
            .grads
            .flatten();
        let flat = params.flatten();
        let step = 1e-4;
        for k in 0..flat.len() {
            let mut plus = flat.clone();
            plus[k] += step;
            let mut minus = flat.clone();
            minus[k] -= step;
            let loss_at = |vals: &[f64]| -> f64 {
                let p = ModelParams::from_flat(3, 4, 3, vals).unwrap();
                loss_and_grad(&p, &stats, &batch).unwrap().loss
            };
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
            let diff = (numeric - analytic[k]).abs();
            if diff < 1e-8 {
                continue; // below central-difference rounding noise
            }
            let rel = diff / numeric.abs().max(analytic[k].abs());
            worst = worst.max(rel);
            assert!(
                rel < 1e-5,
                "seed {seed} coordinate {k}: rel err {rel} (analytic {}, numeric {numeric})",
                analytic[k]
            );
        }
    }
    println!("[PASS] criterion 7: analytic gradients match central differences over 20 seeded pairs (worst rel err {worst:.2e})");
}

fn best_rows(
    summary: &[fedsim::report::SummaryRow],
) -> impl Iterator<Item = &fedsim::report::SummaryRow> {
    summary.iter().filter(|r| r.best)
}

#[test]
fn criterion_08_by_domain_uplift() {
    let started = Instant::now();
    let cfg = reference_config();
    let dir = tempfile::tempdir().unwrap();
    let summary = runner::run_experiment(&cfg, dir.path()).unwrap();

    let standard = best_rows(&summary)
        .find(|r| r.strategy == fedsim_core::eval::Strategy::Standard && r.split == "seen")
        .expect("standard seen row");
    let by_domain = best_rows(&summary)
        .find(|r| r.strategy == fedsim_core::eval::Strategy::ByDomain && r.split == "seen")
        .expect("by_domain seen row");

    let uplift = by_domain.miou_mean - standard.miou_mean;
    assert!(
        uplift >= 1.0,
        "by_domain {:.2}% vs standard {:.2}%: uplift {uplift:.2} < 1 point",
        by_domain.miou_mean,
        standard.miou_mean
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "took {elapsed:?}");
    println!(
        "[PASS] criterion 8: by_domain {:.2}% vs standard {:.2}% seen mIoU (+{uplift:.2} points, 3 seeds, best lr {}) ({elapsed:?})",
        by_domain.miou_mean, standard.miou_mean, by_domain.server_lr
    );
}

#[test]
fn criterion_09_class_imbalance_beats_heterogeneous() {
    let started = Instant::now();
    let mut het_cfg = reference_config();
    het_cfg.federation.silobn = false;
    het_cfg.evaluation.strategies = vec![fedsim_core::eval::Strategy::Standard];

    let mut ci_cfg = het_cfg.clone();
    ci_cfg.distribution = DistributionConfig::ClassImbalance {
        n_clients: 90,
        plan: SizePlanMode::Equal,
    };

    let het_dir = tempfile::tempdir().unwrap();
    let ci_dir = tempfile::tempdir().unwrap();
    let het_summary = runner::run_experiment(&het_cfg, het_dir.path()).unwrap();
    let ci_summary = runner::run_experiment(&ci_cfg, ci_dir.path()).unwrap();

    let het_seen = best_rows(&het_summary)
        .find(|r| r.split == "seen")
        .expect("heterogeneous seen row");
    let ci_seen = best_rows(&ci_summary)
        .find(|r| r.split == "seen")
        .expect("class-imbalance seen row");
    assert!(
        ci_seen.miou_mean > het_seen.miou_mean,
        "class_imbalance {:.2}% not above heterogeneous {:.2}%",
        ci_seen.miou_mean,
        het_seen.miou_mean
    );
    let elapsed = started.elapsed();
    println!(
        "[PASS] criterion 9: FedAvg seen mIoU {:.2}% (class_imbalance) > {:.2}% (heterogeneous) across 3 seeds ({elapsed:?})",
        ci_seen.miou_mean, het_seen.miou_mean
    );
}

#[test]
fn criterion_10_miou_oracle() {
    // all-ones 2x2 confusion matrix: IoU 1/3 per class
    let mut m = ConfusionMatrix::new(2);
    let logits = vec![
        2.0, 0.0, //
        0.0, 2.0, //
        2.0, 0.0, //
        0.0, 2.0,
    ];
    m.accumulate(&logits, &[0, 0, 1, 1]).unwrap();
    let (_, score) = miou(&m).unwrap();
    assert!((score - 33.33).abs() <= 0.01, "mIoU {score}");

    let mut perfect = ConfusionMatrix::new(3);
    let one_hot = vec![5.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 5.0];
    perfect.accumulate(&one_hot, &[0, 1, 2]).unwrap();
    let (_, perfect_score) = miou(&perfect).unwrap();
    assert_eq!(perfect_score, 100.0);
    println!("[PASS] criterion 10: 2x2 example gives {score:.4}% mIoU; perfect predictions give exactly 100%");
}

#[test]
fn criterion_11_end_to_end_determinism() {
    let work = tempfile::tempdir().unwrap();
    let config_path = work.path().join("smoke.cfg");
    std::fs::write(
        &config_path,
        "\
[dataset]
source = synthetic
grid = 2 2 2
images_per_domain = 6
height = 8
width = 8
feature_dim = 4
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
rounds = 3
clients_per_round = 4
local_epochs = 1
local_batch_size = 16
local_lr = 0.05
hidden_dim = 6
bn_momentum = 0.1
silobn = true
optimizer = fedavgm
server_lr = 0.1 1.0
transform = identity

[evaluation]
strategies = standard by_domain
eval_batch_size = 64

[run]
seeds = 0 1
output_dir = unused
",
    )
    .unwrap();

    let out_a = work.path().join("a");
    let out_b = work.path().join("b");
    for out in [&out_a, &out_b] {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_fedsim"))
            .args(["all", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(out)
            .status()
            .expect("binary runs");
        assert!(status.success(), "fedsim all failed");
    }

    let files_a = collect_files(&out_a);
    let files_b = collect_files(&out_b);
    assert!(!files_a.is_empty());
    assert_eq!(
        files_a.keys().collect::<Vec<_>>(),
        files_b.keys().collect::<Vec<_>>()
    );
    let mut compared = 0;
    for (rel, bytes_a) in &files_a {
        let bytes_b = &files_b[rel];
        assert_eq!(bytes_a, bytes_b, "{rel:?} differs between runs");
        compared += 1;
    }
    println!("[PASS] criterion 11: two identical `fedsim all` runs produced byte-identical outputs ({compared} files)");
}

fn collect_files(root: &Path) -> std::collections::BTreeMap<PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}
