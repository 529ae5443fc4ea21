//! Deterministic result-file serialization.
//!
//! All CSVs use comma separation, a header row, `.` decimals, and LF
//! line endings. Floats are printed with Rust's round-trip formatting,
//! so identical computations always produce byte-identical files.

use std::fs;
use std::path::Path;

use fedsim_core::eval::Strategy;
use fedsim_core::federation::ClientState;
use fedsim_core::model::{BnStats, ModelParams};
use fedsim_core::partition::{Partition, PartitionSummary, SkewnessReport};

use crate::error::{AppError, Result};

/// One row of the per-round training log.
#[derive(Clone, Debug)]
pub struct RoundLogRow {
    pub round: u64,
    /// Participant ids in draw order.
    pub participants: Vec<usize>,
    pub mean_local_loss: f64,
    pub server_opt: &'static str,
    pub server_lr: f64,
    pub silobn: bool,
}

pub fn round_log_csv(rows: &[RoundLogRow]) -> String {
    let mut out = String::from("round,participants,mean_local_loss,server_opt,server_lr,silobn\n");
    for row in rows {
        let participants: Vec<String> = row.participants.iter().map(|p| p.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.round,
            participants.join(";"),
            row.mean_local_loss,
            row.server_opt,
            row.server_lr,
            row.silobn
        ));
    }
    out
}

/// One evaluation result row.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub strategy: Strategy,
    /// `seen` or `unseen`.
    pub split: &'static str,
    pub seed: u64,
    pub miou: f64,
    /// Per-class IoU; `None` renders as `nan`.
    pub per_class: Vec<Option<f64>>,
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("strategy,split,seed,miou,per_class_ious\n");
    for row in rows {
        let per_class: Vec<String> = row
            .per_class
            .iter()
            .map(|iou| match iou {
                Some(v) => v.to_string(),
                None => "nan".to_string(),
            })
            .collect();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.strategy.as_str(),
            row.split,
            row.seed,
            row.miou,
            per_class.join(";")
        ));
    }
    out
}

pub fn partition_summary_csv(summary: &PartitionSummary) -> String {
    format!(
        "n_clients,min_size,max_size,mean_size,distribution\n{},{},{},{},{}\n",
        summary.n_clients,
        summary.min_size,
        summary.max_size,
        summary.mean_size,
        summary.kind.as_str()
    )
}

pub fn skewness_csv(report: &SkewnessReport) -> String {
    let mut out = String::from("class,clients_with_class,q1,median,q3,iqr\n");
    for skew in &report.per_class {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            skew.class, skew.clients_with_class, skew.q1, skew.median, skew.q3, skew.iqr
        ));
    }
    out
}

/// Long-format rows for external box plotting, one distribution per
/// block: `distribution,class,clients_with_class,q1,median,q3`.
pub fn figure_csv(entries: &[(String, &SkewnessReport)]) -> String {
    let mut out = String::from("distribution,class,clients_with_class,q1,median,q3\n");
    for (name, report) in entries {
        for skew in &report.per_class {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                name, skew.class, skew.clients_with_class, skew.q1, skew.median, skew.q3
            ));
        }
    }
    out
}

/// `client_index<TAB>sample_id` lines, clients in order.
pub fn partition_tsv(partition: &Partition) -> String {
    let mut out = String::new();
    for (client, members) in partition.clients.iter().enumerate() {
        for id in members {
            out.push_str(&format!("{client}\t{id}\n"));
        }
    }
    out
}

/// One row of the cross-seed summary.
#[derive(Clone, Debug)]
pub struct SummaryRow {
    pub server_lr: f64,
    pub strategy: Strategy,
    pub split: &'static str,
    pub miou_mean: f64,
    pub miou_std: f64,
    pub best: bool,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("server_lr,strategy,split,miou_mean,miou_std,best\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.server_lr,
            row.strategy.as_str(),
            row.split,
            row.miou_mean,
            row.miou_std,
            if row.best { 1 } else { 0 }
        ));
    }
    out
}

/// Write a parameter checkpoint: one `F Hd C` header line, then the
/// flattened learnables one per line in the documented order.
pub fn write_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let mut text = format!(
        "{} {} {}\n",
        params.feature_dim, params.hidden_dim, params.n_classes
    );
    for value in params.flatten() {
        text.push_str(&value.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| AppError::ingest(format!("{}: empty checkpoint", path.display())))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| {
            AppError::ingest(format!(
                "{}: bad checkpoint header '{header}'",
                path.display()
            ))
        })?;
    let [f_dim, h_dim, c_dim] = dims[..] else {
        return Err(AppError::ingest(format!(
            "{}: checkpoint header must be 'F Hd C'",
            path.display()
        )));
    };
    let flat: Vec<f64> = lines
        .map(|line| {
            line.trim().parse().map_err(|_| {
                AppError::ingest(format!("{}: non-numeric checkpoint value", path.display()))
            })
        })
        .collect::<Result<_>>()?;
    Ok(ModelParams::from_flat(f_dim, h_dim, c_dim, &flat)?)
}

/// Persist the participated clients' BN statistics, one line per
/// client: `id<TAB>steps<TAB>momentum<TAB>means<TAB>vars` with
/// space-separated vectors.
pub fn write_client_stats(path: &Path, clients: &[ClientState]) -> Result<()> {
    let mut text = String::new();
    for client in clients {
        if let Some(stats) = &client.bn_stats {
            let means: Vec<String> = stats.running_mean.iter().map(|v| v.to_string()).collect();
            let vars: Vec<String> = stats.running_var.iter().map(|v| v.to_string()).collect();
            text.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                client.id,
                stats.steps,
                stats.momentum,
                means.join(" "),
                vars.join(" ")
            ));
        }
    }
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

/// Overlay persisted BN statistics onto freshly initialized clients.
pub fn load_client_stats(path: &Path, clients: &mut [ClientState]) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, steps, momentum, means, vars] = fields[..] else {
            return Err(AppError::ingest(format!(
                "{}: expected 5 tab-separated fields",
                path.display()
            )));
        };
        let id: usize = id
            .parse()
            .map_err(|_| AppError::ingest(format!("{}: bad client id '{id}'", path.display())))?;
        let parse_vec = |s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| {
                    t.parse().map_err(|_| {
                        AppError::ingest(format!("{}: non-numeric statistic", path.display()))
                    })
                })
                .collect()
        };
        let stats = BnStats {
            running_mean: parse_vec(means)?,
            running_var: parse_vec(vars)?,
            momentum: momentum.parse().map_err(|_| {
                AppError::ingest(format!("{}: bad momentum '{momentum}'", path.display()))
            })?,
            steps: steps.parse().map_err(|_| {
                AppError::ingest(format!("{}: bad step count '{steps}'", path.display()))
            })?,
        };
        let client = clients.get_mut(id).ok_or_else(|| {
            AppError::ingest(format!("{}: unknown client id {id}", path.display()))
        })?;
        client.bn_stats = Some(stats);
    }
    Ok(())
}
