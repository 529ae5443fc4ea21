//! Command-line interface: one subcommand per pipeline stage plus `all`.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use fedsim_core::federation::init_clients;

use crate::config::ExperimentConfig;
use crate::error::{AppError, Result};
use crate::manifest::write_manifest;
use crate::report::{load_checkpoint, load_client_stats};
use crate::runner;

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Deterministic federated-learning simulation engine"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Build the dataset and export it as a manifest under OUT/dataset
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sweep seed to build for; defaults to the config's first seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Split the dataset and partition the training set across clients
    Partition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run federated training for one (seed, server-lr) cell
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Server learning rate; defaults to the config's first entry
        #[arg(long)]
        server_lr: Option<f64>,
    },
    /// Score a trained cell with the configured inference strategies
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        server_lr: Option<f64>,
    },
    /// Compare label skewness across the three client distributions
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full sweep: every seed and server learning rate
    All {
        #[arg(long)]
        config: PathBuf,
        /// Output root; defaults to the config's output_dir
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seed list overriding the config's seeds
        #[arg(long)]
        seeds: Option<String>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let seed = seed.unwrap_or(cfg.run.seeds[0]);
            let data = runner::build_dataset(&cfg, seed)?;
            let manifest = write_manifest(&data, &out.join("dataset"))?;
            println!("wrote {} samples to {}", data.len(), manifest.display());
            Ok(())
        }
        Command::Partition { config, out, seed } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let seed = seed.unwrap_or(cfg.run.seeds[0]);
            let prepared = runner::prepare(&cfg, seed)?;
            runner::write_partition_artifacts(&out, &prepared, cfg.dataset.n_classes())?;
            println!(
                "partitioned {} training samples into {} clients",
                prepared.split.train.len(),
                prepared.partition.n_clients()
            );
            Ok(())
        }
        Command::Train {
            config,
            out,
            seed,
            server_lr,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let seed = seed.unwrap_or(cfg.run.seeds[0]);
            let lr = server_lr.unwrap_or(cfg.federation.server_lrs[0]);
            let prepared = runner::prepare(&cfg, seed)?;
            let dir = runner::cell_dir(&out, seed, lr);
            runner::write_partition_artifacts(&dir, &prepared, cfg.dataset.n_classes())?;
            runner::train_cell(&cfg, &prepared, seed, lr, &dir)?;
            println!(
                "trained {} rounds into {}",
                cfg.federation.rounds,
                dir.display()
            );
            Ok(())
        }
        Command::Evaluate {
            config,
            out,
            seed,
            server_lr,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let seed = seed.unwrap_or(cfg.run.seeds[0]);
            let lr = server_lr.unwrap_or(cfg.federation.server_lrs[0]);
            let dir = runner::cell_dir(&out, seed, lr);
            let prepared = runner::prepare(&cfg, seed)?;

            let params = load_checkpoint(&dir.join("checkpoint.txt"))?;
            if params.hidden_dim != cfg.federation.hidden_dim
                || params.n_classes != cfg.dataset.n_classes()
            {
                return Err(AppError::config(
                    "checkpoint shape does not match the configuration",
                ));
            }
            let mut clients = init_clients(&prepared.partition, &prepared.split.train)?;
            load_client_stats(&dir.join("client_stats.tsv"), &mut clients)?;
            let rows = runner::evaluate_cell(&cfg, &prepared, &params, &clients, seed, &dir)?;
            for row in rows {
                println!(
                    "{} {} mIoU {:.2}%",
                    row.strategy.as_str(),
                    row.split,
                    row.miou
                );
            }
            Ok(())
        }
        Command::Report { config, out, seed } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let seed = seed.unwrap_or(cfg.run.seeds[0]);
            runner::run_report(&cfg, seed, &out)?;
            println!("wrote {}", out.join("figure_skewness.csv").display());
            Ok(())
        }
        Command::All { config, out, seeds } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(list) = seeds {
                cfg.run.seeds = list
                    .split(',')
                    .map(|t| {
                        t.trim().parse().map_err(|_| {
                            AppError::config(format!("--seeds: '{t}' is not an integer"))
                        })
                    })
                    .collect::<Result<Vec<u64>>>()?;
                if cfg.run.seeds.is_empty() {
                    return Err(AppError::config("--seeds: list must be non-empty"));
                }
            }
            let out_root = out.unwrap_or_else(|| PathBuf::from(&cfg.run.output_dir));
            let summary = runner::run_experiment(&cfg, &out_root)?;
            for row in summary.iter().filter(|r| r.best) {
                println!(
                    "best server_lr {}: {} {} mIoU {:.2}% (std {:.2})",
                    row.server_lr,
                    row.strategy.as_str(),
                    row.split,
                    row.miou_mean,
                    row.miou_std
                );
            }
            Ok(())
        }
    }
}
