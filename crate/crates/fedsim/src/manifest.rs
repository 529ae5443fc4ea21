//! Manifest-based dataset ingestion and export.
//!
//! A manifest is a line-delimited text file with one record per sample,
//! tab-separated fields:
//!
//! ```text
//! id <TAB> weather <TAB> viewpoint <TAB> town <TAB> label_path [<TAB> feature_path]
//! ```
//!
//! `feature_path` may be absent for label-only use. Paths are resolved
//! relative to the manifest's directory. A label file starts with a
//! `H W` line followed by `H` lines of `W` space-separated integers
//! (`-1` = ignore). A feature file starts with `H W F` followed by
//! `H*W` lines of `F` space-separated decimals, row-major.

use std::fs;
use std::path::{Path, PathBuf};

use fedsim_core::dataset::{Dataset, DomainKey, GridDims, Sample};

use crate::error::{AppError, Result};

/// Load a manifest into a dataset.
///
/// `n_classes` bounds the admissible label values; the grid dimensions
/// are inferred as one past the largest index seen on each axis.
pub fn load_manifest(path: &Path, n_classes: usize) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut samples = Vec::new();
    let mut feature_dim: Option<usize> = None;
    for (line_no, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 && fields.len() != 6 {
            return Err(AppError::ingest(format!(
                "{}:{}: expected 5 or 6 tab-separated fields, found {}",
                path.display(),
                line_no + 1,
                fields.len()
            )));
        }
        let id = fields[0].to_string();
        let parse_axis = |value: &str, name: &str| -> Result<usize> {
            value.parse().map_err(|_| {
                AppError::ingest(format!(
                    "sample '{id}': {name} '{value}' is not a non-negative integer"
                ))
            })
        };
        let domain = DomainKey {
            weather: parse_axis(fields[1], "weather")?,
            viewpoint: parse_axis(fields[2], "viewpoint")?,
            town: parse_axis(fields[3], "town")?,
        };

        let (height, width, labels) = load_label_file(&base.join(fields[4]), &id, n_classes)?;

        let features = if fields.len() == 6 {
            let (h, w, f, values) = load_feature_file(&base.join(fields[5]), &id)?;
            if h != height || w != width {
                return Err(AppError::ingest(format!(
                    "sample '{id}': feature grid {h}x{w} does not match label grid {height}x{width}"
                )));
            }
            match feature_dim {
                None => feature_dim = Some(f),
                Some(expect) if expect != f => {
                    return Err(AppError::ingest(format!(
                        "sample '{id}': feature dim {f} differs from earlier samples' {expect}"
                    )));
                }
                _ => {}
            }
            values
        } else {
            Vec::new()
        };

        samples.push(Sample {
            id,
            domain,
            height,
            width,
            features,
            labels,
        });
    }

    let grid = GridDims::new(
        samples
            .iter()
            .map(|s| s.domain.weather + 1)
            .max()
            .unwrap_or(1),
        samples
            .iter()
            .map(|s| s.domain.viewpoint + 1)
            .max()
            .unwrap_or(1),
        samples.iter().map(|s| s.domain.town + 1).max().unwrap_or(1),
    );
    Ok(Dataset::new(
        samples,
        n_classes,
        feature_dim.unwrap_or(0),
        grid,
    )?)
}

fn load_label_file(path: &Path, id: &str, n_classes: usize) -> Result<(usize, usize, Vec<i32>)> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| AppError::ingest(format!("sample '{id}': label file is empty")))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| AppError::ingest(format!("sample '{id}': bad label header '{header}'")))?;
    let [height, width] = dims[..] else {
        return Err(AppError::ingest(format!(
            "sample '{id}': label header must be 'H W', got '{header}'"
        )));
    };

    let mut labels = Vec::with_capacity(height * width);
    for row in 0..height {
        let line = lines.next().ok_or_else(|| {
            AppError::ingest(format!("sample '{id}': label file ends before row {row}"))
        })?;
        let values: Vec<i32> = line
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| {
                AppError::ingest(format!("sample '{id}': non-integer label in row {row}"))
            })?;
        if values.len() != width {
            return Err(AppError::ingest(format!(
                "sample '{id}': label row {row} has {} entries, expected {width}",
                values.len()
            )));
        }
        for &value in &values {
            if value != -1 && (value < 0 || value as usize >= n_classes) {
                return Err(AppError::ingest(format!(
                    "sample '{id}': label {value} outside [0, {n_classes})"
                )));
            }
        }
        labels.extend(values);
    }
    Ok((height, width, labels))
}

fn load_feature_file(path: &Path, id: &str) -> Result<(usize, usize, usize, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| AppError::ingest(format!("sample '{id}': feature file is empty")))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| AppError::ingest(format!("sample '{id}': bad feature header '{header}'")))?;
    let [height, width, f_dim] = dims[..] else {
        return Err(AppError::ingest(format!(
            "sample '{id}': feature header must be 'H W F', got '{header}'"
        )));
    };

    let mut values = Vec::with_capacity(height * width * f_dim);
    for pixel in 0..height * width {
        let line = lines.next().ok_or_else(|| {
            AppError::ingest(format!(
                "sample '{id}': feature file ends before pixel {pixel}"
            ))
        })?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| {
                AppError::ingest(format!(
                    "sample '{id}': non-numeric feature at pixel {pixel}"
                ))
            })?;
        if row.len() != f_dim {
            return Err(AppError::ingest(format!(
                "sample '{id}': pixel {pixel} has {} features, expected {f_dim}",
                row.len()
            )));
        }
        values.extend(row);
    }
    Ok((height, width, f_dim, values))
}

/// Write a dataset as a manifest plus per-sample label and feature
/// files under `dir`. Floats are printed with round-trip precision, so
/// `load_manifest` reconstructs the dataset exactly.
pub fn write_manifest(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("labels")).map_err(|e| AppError::io(dir, e))?;
    let any_features = dataset.samples.iter().any(Sample::has_features);
    if any_features {
        fs::create_dir_all(dir.join("features")).map_err(|e| AppError::io(dir, e))?;
    }

    let mut manifest = String::new();
    for (i, sample) in dataset.samples.iter().enumerate() {
        let label_rel = format!("labels/{i:06}.txt");
        let mut label_text = format!("{} {}\n", sample.height, sample.width);
        for row in 0..sample.height {
            let cells: Vec<String> = (0..sample.width)
                .map(|c| sample.labels[row * sample.width + c].to_string())
                .collect();
            label_text.push_str(&cells.join(" "));
            label_text.push('\n');
        }
        let label_path = dir.join(&label_rel);
        fs::write(&label_path, label_text).map_err(|e| AppError::io(&label_path, e))?;

        let mut record = format!(
            "{}\t{}\t{}\t{}\t{}",
            sample.id,
            sample.domain.weather,
            sample.domain.viewpoint,
            sample.domain.town,
            label_rel
        );
        if sample.has_features() {
            let feature_rel = format!("features/{i:06}.txt");
            let f_dim = dataset.feature_dim;
            let mut feature_text = format!("{} {} {}\n", sample.height, sample.width, f_dim);
            for pixel in 0..sample.n_pixels() {
                let cells: Vec<String> = sample
                    .feature_row(pixel, f_dim)
                    .iter()
                    .map(|v| v.to_string())
                    .collect();
                feature_text.push_str(&cells.join(" "));
                feature_text.push('\n');
            }
            let feature_path = dir.join(&feature_rel);
            fs::write(&feature_path, feature_text).map_err(|e| AppError::io(&feature_path, e))?;
            record.push('\t');
            record.push_str(&feature_rel);
        }
        record.push('\n');
        manifest.push_str(&record);
    }

    let manifest_path = dir.join("manifest.tsv");
    fs::write(&manifest_path, manifest).map_err(|e| AppError::io(&manifest_path, e))?;
    Ok(manifest_path)
}
