//! Declarative experiment configuration.
//!
//! The on-disk format is line-oriented text: `[section]` headers, one
//! `key = value` pair per line, `#` comment lines, and blank lines.
//! Lists are space-separated. Unknown sections or keys are rejected with
//! the offending name, as are missing required keys, before any dataset
//! work happens.
//!
//! ```text
//! [dataset]
//! source = synthetic
//! grid = 3 5 7
//! ...
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use fedsim_core::dataset::{DomainAxis, GridDims, SyntheticSpec};
use fedsim_core::eval::Strategy;
use fedsim_core::federation::ServerOptKind;
use fedsim_core::partition::SizePlanMode;

use crate::error::{AppError, Result};

/// Where the dataset comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetConfig {
    Synthetic {
        grid: GridDims,
        images_per_domain: usize,
        height: usize,
        width: usize,
        feature_dim: usize,
        n_classes: usize,
        class_separation: f64,
        domain_shift: f64,
        noise_std: f64,
        zeroed_classes_per_town: usize,
        /// Fixed generation seed; defaults to the sweep seed when absent.
        seed: Option<u64>,
    },
    Manifest {
        path: String,
        n_classes: usize,
    },
}

impl DatasetConfig {
    pub fn n_classes(&self) -> usize {
        match self {
            DatasetConfig::Synthetic { n_classes, .. } => *n_classes,
            DatasetConfig::Manifest { n_classes, .. } => *n_classes,
        }
    }

    /// Synthetic spec for one sweep seed; `None` for manifest datasets.
    pub fn synthetic_spec(&self, sweep_seed: u64) -> Option<SyntheticSpec> {
        match self {
            DatasetConfig::Synthetic {
                grid,
                images_per_domain,
                height,
                width,
                feature_dim,
                n_classes,
                class_separation,
                domain_shift,
                noise_std,
                zeroed_classes_per_town,
                seed,
            } => Some(SyntheticSpec {
                grid: *grid,
                images_per_domain: *images_per_domain,
                height: *height,
                width: *width,
                feature_dim: *feature_dim,
                n_classes: *n_classes,
                class_separation: *class_separation,
                domain_shift: *domain_shift,
                noise_std: *noise_std,
                zeroed_classes_per_town: *zeroed_classes_per_town,
                profiles: None,
                seed: seed.unwrap_or(sweep_seed),
            }),
            DatasetConfig::Manifest { .. } => None,
        }
    }
}

/// Named train/test partition. The named axes follow the convention
/// that the special value sits at the last index of its axis: `country`
/// is the last town, `rainy` the last weather, `bus` the last viewpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Country,
    Rainy,
    Bus,
    Custom { axis: DomainAxis, index: usize },
}

impl SplitName {
    /// Resolve to a concrete (axis, index) pair on the given grid.
    pub fn resolve(&self, grid: GridDims) -> (DomainAxis, usize) {
        match self {
            SplitName::Country => (DomainAxis::Town, grid.n_towns - 1),
            SplitName::Rainy => (DomainAxis::Weather, grid.n_weathers - 1),
            SplitName::Bus => (DomainAxis::Viewpoint, grid.n_viewpoints - 1),
            SplitName::Custom { axis, index } => (*axis, *index),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitConfig {
    pub partition: SplitName,
    pub seen_per_domain: usize,
}

/// Client distribution plus, where applicable, its size plan.
#[derive(Clone, Debug, PartialEq)]
pub enum DistributionConfig {
    Uniform {
        n_clients: usize,
        plan: SizePlanMode,
    },
    Heterogeneous,
    ClassImbalance {
        n_clients: usize,
        plan: SizePlanMode,
    },
}

impl DistributionConfig {
    pub fn kind_str(&self) -> &'static str {
        match self {
            DistributionConfig::Uniform { .. } => "uniform",
            DistributionConfig::Heterogeneous => "heterogeneous",
            DistributionConfig::ClassImbalance { .. } => "class_imbalance",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FederationConfig {
    pub rounds: usize,
    pub clients_per_round: usize,
    pub local_epochs: usize,
    pub local_batch_size: usize,
    pub local_lr: f64,
    pub hidden_dim: usize,
    pub bn_momentum: f64,
    pub silobn: bool,
    pub optimizer: ServerOptKind,
    /// Server learning rates to sweep.
    pub server_lrs: Vec<f64>,
    /// FedAvgM momentum.
    pub server_momentum: f64,
    /// Registered sample-transform name; only `identity` ships.
    pub transform: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationConfig {
    pub strategies: Vec<Strategy>,
    pub eval_batch_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub output_dir: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub distribution: DistributionConfig,
    pub federation: FederationConfig,
    pub evaluation: EvaluationConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let sections = split_sections(text)?;
        let config = Self {
            dataset: parse_dataset(section(&sections, "dataset")?)?,
            split: parse_split(section(&sections, "split")?)?,
            distribution: parse_distribution(section(&sections, "distribution")?)?,
            federation: parse_federation(section(&sections, "federation")?)?,
            evaluation: parse_evaluation(section(&sections, "evaluation")?)?,
            run: parse_run(section(&sections, "run")?)?,
        };
        config.validate()?;
        Ok(config)
    }

    /// Cross-section invariants, checked before any dataset work.
    pub fn validate(&self) -> Result<()> {
        if self.evaluation.strategies.contains(&Strategy::ByDomain)
            && !matches!(self.distribution, DistributionConfig::Heterogeneous)
        {
            return Err(AppError::config(
                "evaluation.strategies: by_domain requires distribution.kind = heterogeneous",
            ));
        }
        match &self.distribution {
            DistributionConfig::Uniform { n_clients, plan }
            | DistributionConfig::ClassImbalance { n_clients, plan } => {
                if *n_clients == 0 {
                    return Err(AppError::config("distribution.n_clients: must be >= 1"));
                }
                if self.federation.clients_per_round > *n_clients {
                    return Err(AppError::config(
                        "federation.clients_per_round: exceeds distribution.n_clients",
                    ));
                }
                if let SizePlanMode::Range { min, max } = plan {
                    if *min == 0 || min > max {
                        return Err(AppError::config(
                            "distribution.min_size/max_size: need 1 <= min <= max",
                        ));
                    }
                }
            }
            DistributionConfig::Heterogeneous => {}
        }
        if let DatasetConfig::Synthetic {
            grid,
            n_classes,
            zeroed_classes_per_town,
            ..
        } = &self.dataset
        {
            if grid.n_domains() == 0 {
                return Err(AppError::config(
                    "dataset.grid: every dimension must be >= 1",
                ));
            }
            if zeroed_classes_per_town >= n_classes {
                return Err(AppError::config(
                    "dataset.zeroed_classes_per_town: must leave at least one class",
                ));
            }
            if let SplitName::Custom { axis, index } = self.split.partition {
                let extent = match axis {
                    DomainAxis::Weather => grid.n_weathers,
                    DomainAxis::Viewpoint => grid.n_viewpoints,
                    DomainAxis::Town => grid.n_towns,
                };
                if index >= extent {
                    return Err(AppError::config("split.index: outside the dataset grid"));
                }
            }
        }
        if self.dataset.n_classes() == 0 {
            return Err(AppError::config("dataset.n_classes: must be >= 1"));
        }
        if self.federation.rounds == 0 {
            return Err(AppError::config("federation.rounds: must be >= 1"));
        }
        if self.federation.clients_per_round == 0 {
            return Err(AppError::config(
                "federation.clients_per_round: must be >= 1",
            ));
        }
        if self.federation.local_epochs == 0 {
            return Err(AppError::config("federation.local_epochs: must be >= 1"));
        }
        if self.federation.local_batch_size < 2 {
            return Err(AppError::config(
                "federation.local_batch_size: must be >= 2",
            ));
        }
        if self.federation.hidden_dim == 0 {
            return Err(AppError::config("federation.hidden_dim: must be >= 1"));
        }
        if !(self.federation.bn_momentum > 0.0 && self.federation.bn_momentum <= 1.0) {
            return Err(AppError::config(
                "federation.bn_momentum: must lie in (0, 1]",
            ));
        }
        if self.federation.server_lrs.is_empty() {
            return Err(AppError::config(
                "federation.server_lr: list must be non-empty",
            ));
        }
        if self.federation.transform != "identity" {
            return Err(AppError::config(format!(
                "federation.transform: unknown transform '{}'",
                self.federation.transform
            )));
        }
        if self.evaluation.strategies.is_empty() {
            return Err(AppError::config(
                "evaluation.strategies: list must be non-empty",
            ));
        }
        if self.evaluation.eval_batch_size == 0 {
            return Err(AppError::config("evaluation.eval_batch_size: must be >= 1"));
        }
        if self.run.seeds.is_empty() {
            return Err(AppError::config("run.seeds: list must be non-empty"));
        }
        Ok(())
    }

    /// Canonical text form; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("[dataset]\n");
        match &self.dataset {
            DatasetConfig::Synthetic {
                grid,
                images_per_domain,
                height,
                width,
                feature_dim,
                n_classes,
                class_separation,
                domain_shift,
                noise_std,
                zeroed_classes_per_town,
                seed,
            } => {
                out.push_str("source = synthetic\n");
                let _ = writeln!(
                    out,
                    "grid = {} {} {}",
                    grid.n_weathers, grid.n_viewpoints, grid.n_towns
                );
                let _ = writeln!(out, "images_per_domain = {images_per_domain}");
                let _ = writeln!(out, "height = {height}");
                let _ = writeln!(out, "width = {width}");
                let _ = writeln!(out, "feature_dim = {feature_dim}");
                let _ = writeln!(out, "n_classes = {n_classes}");
                let _ = writeln!(out, "class_separation = {class_separation}");
                let _ = writeln!(out, "domain_shift = {domain_shift}");
                let _ = writeln!(out, "noise_std = {noise_std}");
                let _ = writeln!(out, "zeroed_classes_per_town = {zeroed_classes_per_town}");
                if let Some(seed) = seed {
                    let _ = writeln!(out, "seed = {seed}");
                }
            }
            DatasetConfig::Manifest { path, n_classes } => {
                out.push_str("source = manifest\n");
                let _ = writeln!(out, "manifest_path = {path}");
                let _ = writeln!(out, "n_classes = {n_classes}");
            }
        }

        out.push_str("\n[split]\n");
        match self.split.partition {
            SplitName::Country => out.push_str("partition = country\n"),
            SplitName::Rainy => out.push_str("partition = rainy\n"),
            SplitName::Bus => out.push_str("partition = bus\n"),
            SplitName::Custom { axis, index } => {
                out.push_str("partition = custom\n");
                let axis = match axis {
                    DomainAxis::Weather => "weather",
                    DomainAxis::Viewpoint => "viewpoint",
                    DomainAxis::Town => "town",
                };
                let _ = writeln!(out, "axis = {axis}");
                let _ = writeln!(out, "index = {index}");
            }
        }
        let _ = writeln!(out, "seen_per_domain = {}", self.split.seen_per_domain);

        out.push_str("\n[distribution]\n");
        let _ = writeln!(out, "kind = {}", self.distribution.kind_str());
        match &self.distribution {
            DistributionConfig::Uniform { n_clients, plan }
            | DistributionConfig::ClassImbalance { n_clients, plan } => {
                let _ = writeln!(out, "n_clients = {n_clients}");
                match plan {
                    SizePlanMode::Equal => out.push_str("plan = equal\n"),
                    SizePlanMode::Range { min, max } => {
                        out.push_str("plan = range\n");
                        let _ = writeln!(out, "min_size = {min}");
                        let _ = writeln!(out, "max_size = {max}");
                    }
                }
            }
            DistributionConfig::Heterogeneous => {}
        }

        out.push_str("\n[federation]\n");
        let f = &self.federation;
        let _ = writeln!(out, "rounds = {}", f.rounds);
        let _ = writeln!(out, "clients_per_round = {}", f.clients_per_round);
        let _ = writeln!(out, "local_epochs = {}", f.local_epochs);
        let _ = writeln!(out, "local_batch_size = {}", f.local_batch_size);
        let _ = writeln!(out, "local_lr = {}", f.local_lr);
        let _ = writeln!(out, "hidden_dim = {}", f.hidden_dim);
        let _ = writeln!(out, "bn_momentum = {}", f.bn_momentum);
        let _ = writeln!(out, "silobn = {}", f.silobn);
        let _ = writeln!(out, "optimizer = {}", f.optimizer.as_str());
        let lrs: Vec<String> = f.server_lrs.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "server_lr = {}", lrs.join(" "));
        let _ = writeln!(out, "server_momentum = {}", f.server_momentum);
        let _ = writeln!(out, "transform = {}", f.transform);

        out.push_str("\n[evaluation]\n");
        let strategies: Vec<&str> = self
            .evaluation
            .strategies
            .iter()
            .map(|s| s.as_str())
            .collect();
        let _ = writeln!(out, "strategies = {}", strategies.join(" "));
        let _ = writeln!(out, "eval_batch_size = {}", self.evaluation.eval_batch_size);

        out.push_str("\n[run]\n");
        let seeds: Vec<String> = self.run.seeds.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "seeds = {}", seeds.join(" "));
        let _ = writeln!(out, "output_dir = {}", self.run.output_dir);
        out
    }
}

type Section = BTreeMap<String, String>;

fn split_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim().to_string();
            if !matches!(
                name.as_str(),
                "dataset" | "split" | "distribution" | "federation" | "evaluation" | "run"
            ) {
                return Err(AppError::config(format!(
                    "line {}: unknown section [{name}]",
                    line_no + 1
                )));
            }
            current = Some(name.clone());
            sections.entry(name).or_default();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(AppError::config(format!(
                "line {}: expected 'key = value', got '{line}'",
                line_no + 1
            )));
        };
        let Some(section) = &current else {
            return Err(AppError::config(format!(
                "line {}: key outside any [section]",
                line_no + 1
            )));
        };
        sections
            .get_mut(section)
            .unwrap()
            .insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(sections)
}

fn section<'a>(sections: &'a BTreeMap<String, Section>, name: &str) -> Result<&'a Section> {
    sections
        .get(name)
        .ok_or_else(|| AppError::config(format!("missing section [{name}]")))
}

struct Keys<'a> {
    section: &'a str,
    map: &'a Section,
    used: Vec<&'a str>,
}

impl<'a> Keys<'a> {
    fn new(section: &'a str, map: &'a Section) -> Self {
        Self {
            section,
            map,
            used: Vec::new(),
        }
    }

    fn optional(&mut self, key: &'a str) -> Option<&'a str> {
        self.used.push(key);
        self.map.get(key).map(String::as_str)
    }

    fn required(&mut self, key: &'a str) -> Result<&'a str> {
        self.optional(key).ok_or_else(|| {
            AppError::config(format!("missing key '{key}' in section [{}]", self.section))
        })
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &'a str) -> Result<T> {
        let value = self.required(key)?;
        value.parse().map_err(|_| {
            AppError::config(format!("[{}].{key}: cannot parse '{value}'", self.section))
        })
    }

    fn parse_list<T: std::str::FromStr>(&mut self, key: &'a str) -> Result<Vec<T>> {
        let value = self.required(key)?;
        value
            .split_whitespace()
            .map(|t| {
                t.parse().map_err(|_| {
                    AppError::config(format!("[{}].{key}: cannot parse '{t}'", self.section))
                })
            })
            .collect()
    }

    /// Reject keys that were never consumed.
    fn finish(self) -> Result<()> {
        for key in self.map.keys() {
            if !self.used.contains(&key.as_str()) {
                return Err(AppError::config(format!(
                    "unknown key '{key}' in section [{}]",
                    self.section
                )));
            }
        }
        Ok(())
    }
}

fn parse_dataset(map: &Section) -> Result<DatasetConfig> {
    let mut keys = Keys::new("dataset", map);
    let source = keys.required("source")?;
    let config = match source {
        "synthetic" => {
            let grid: Vec<usize> = keys.parse_list("grid")?;
            let [nw, nv, nt] = grid[..] else {
                return Err(AppError::config(
                    "[dataset].grid: expected three integers 'W V T'",
                ));
            };
            DatasetConfig::Synthetic {
                grid: GridDims::new(nw, nv, nt),
                images_per_domain: keys.parse("images_per_domain")?,
                height: keys.parse("height")?,
                width: keys.parse("width")?,
                feature_dim: keys.parse("feature_dim")?,
                n_classes: keys.parse("n_classes")?,
                class_separation: keys.parse("class_separation")?,
                domain_shift: keys.parse("domain_shift")?,
                noise_std: keys.parse("noise_std")?,
                zeroed_classes_per_town: keys.parse("zeroed_classes_per_town")?,
                seed: match keys.optional("seed") {
                    Some(v) => Some(v.parse().map_err(|_| {
                        AppError::config(format!("[dataset].seed: cannot parse '{v}'"))
                    })?),
                    None => None,
                },
            }
        }
        "manifest" => DatasetConfig::Manifest {
            path: keys.required("manifest_path")?.to_string(),
            n_classes: keys.parse("n_classes")?,
        },
        other => {
            return Err(AppError::config(format!(
                "[dataset].source: expected 'synthetic' or 'manifest', got '{other}'"
            )))
        }
    };
    keys.finish()?;
    Ok(config)
}

fn parse_split(map: &Section) -> Result<SplitConfig> {
    let mut keys = Keys::new("split", map);
    let partition = match keys.required("partition")? {
        "country" => SplitName::Country,
        "rainy" => SplitName::Rainy,
        "bus" => SplitName::Bus,
        "custom" => {
            let axis = match keys.required("axis")? {
                "weather" => DomainAxis::Weather,
                "viewpoint" => DomainAxis::Viewpoint,
                "town" => DomainAxis::Town,
                other => {
                    return Err(AppError::config(format!(
                        "[split].axis: expected weather|viewpoint|town, got '{other}'"
                    )))
                }
            };
            SplitName::Custom {
                axis,
                index: keys.parse("index")?,
            }
        }
        other => {
            return Err(AppError::config(format!(
                "[split].partition: expected country|rainy|bus|custom, got '{other}'"
            )))
        }
    };
    let config = SplitConfig {
        partition,
        seen_per_domain: keys.parse("seen_per_domain")?,
    };
    keys.finish()?;
    Ok(config)
}

fn parse_distribution(map: &Section) -> Result<DistributionConfig> {
    let mut keys = Keys::new("distribution", map);
    let kind = keys.required("kind")?;
    let config = match kind {
        "heterogeneous" => {
            // sizes are implied by the domains; explicit plans are invalid
            for forbidden in ["n_clients", "plan", "min_size", "max_size"] {
                if map.contains_key(forbidden) {
                    return Err(AppError::config(format!(
                        "[distribution].{forbidden}: not allowed with kind = heterogeneous"
                    )));
                }
            }
            DistributionConfig::Heterogeneous
        }
        "uniform" | "class_imbalance" => {
            let n_clients = keys.parse("n_clients")?;
            let plan = match keys.required("plan")? {
                "equal" => SizePlanMode::Equal,
                "range" => SizePlanMode::Range {
                    min: keys.parse("min_size")?,
                    max: keys.parse("max_size")?,
                },
                other => {
                    return Err(AppError::config(format!(
                        "[distribution].plan: expected equal|range, got '{other}'"
                    )))
                }
            };
            if kind == "uniform" {
                DistributionConfig::Uniform { n_clients, plan }
            } else {
                DistributionConfig::ClassImbalance { n_clients, plan }
            }
        }
        other => {
            return Err(AppError::config(format!(
                "[distribution].kind: expected uniform|heterogeneous|class_imbalance, got '{other}'"
            )))
        }
    };
    keys.finish()?;
    Ok(config)
}

fn parse_federation(map: &Section) -> Result<FederationConfig> {
    let mut keys = Keys::new("federation", map);
    let optimizer = match keys.required("optimizer")? {
        "sgd" => ServerOptKind::Sgd,
        "fedavgm" => ServerOptKind::FedAvgM,
        "adam" => ServerOptKind::Adam,
        "adagrad" => ServerOptKind::AdaGrad,
        other => {
            return Err(AppError::config(format!(
                "[federation].optimizer: expected sgd|fedavgm|adam|adagrad, got '{other}'"
            )))
        }
    };
    let silobn = match keys.required("silobn")? {
        "true" => true,
        "false" => false,
        other => {
            return Err(AppError::config(format!(
                "[federation].silobn: expected true|false, got '{other}'"
            )))
        }
    };
    let config = FederationConfig {
        rounds: keys.parse("rounds")?,
        clients_per_round: keys.parse("clients_per_round")?,
        local_epochs: keys.parse("local_epochs")?,
        local_batch_size: keys.parse("local_batch_size")?,
        local_lr: keys.parse("local_lr")?,
        hidden_dim: keys.parse("hidden_dim")?,
        bn_momentum: keys.parse("bn_momentum")?,
        silobn,
        optimizer,
        server_lrs: keys.parse_list("server_lr")?,
        server_momentum: match keys.optional("server_momentum") {
            Some(v) => v.parse().map_err(|_| {
                AppError::config(format!("[federation].server_momentum: cannot parse '{v}'"))
            })?,
            None => 0.9,
        },
        transform: keys.required("transform")?.to_string(),
    };
    keys.finish()?;
    Ok(config)
}

fn parse_evaluation(map: &Section) -> Result<EvaluationConfig> {
    let mut keys = Keys::new("evaluation", map);
    let strategies = keys
        .required("strategies")?
        .split_whitespace()
        .map(|token| match token {
            "standard" => Ok(Strategy::Standard),
            "by_domain" => Ok(Strategy::ByDomain),
            other => Err(AppError::config(format!(
                "[evaluation].strategies: expected standard|by_domain, got '{other}'"
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    let config = EvaluationConfig {
        strategies,
        eval_batch_size: keys.parse("eval_batch_size")?,
    };
    keys.finish()?;
    Ok(config)
}

fn parse_run(map: &Section) -> Result<RunConfig> {
    let mut keys = Keys::new("run", map);
    let config = RunConfig {
        seeds: keys.parse_list("seeds")?,
        output_dir: keys.required("output_dir")?.to_string(),
    };
    keys.finish()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_config_text() -> String {
        "\
# demo configuration
[dataset]
source = synthetic
grid = 2 3 4
images_per_domain = 14
height = 8
width = 8
feature_dim = 4
n_classes = 5
class_separation = 1.5
domain_shift = 1
noise_std = 0.3
zeroed_classes_per_town = 1

[split]
partition = country
seen_per_domain = 2

[distribution]
kind = heterogeneous

[federation]
rounds = 3
clients_per_round = 2
local_epochs = 1
local_batch_size = 16
local_lr = 0.1
hidden_dim = 6
bn_momentum = 0.1
silobn = true
optimizer = sgd
server_lr = 0.1 1
transform = identity

[evaluation]
strategies = standard by_domain
eval_batch_size = 64

[run]
seeds = 0 1
output_dir = out
"
        .to_string()
    }

    #[test]
    fn parse_serialize_parse_round_trips() {
        let a = ExperimentConfig::parse(&sample_config_text()).unwrap();
        let b = ExperimentConfig::parse(&a.serialize()).unwrap();
        assert_eq!(a, b);
        // and serialization is a fixed point
        assert_eq!(a.serialize(), b.serialize());
    }

    #[test]
    fn unknown_key_is_named() {
        let text = sample_config_text().replace("noise_std", "noise_level");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("noise_level") || msg.contains("noise_std"),
            "{msg}"
        );
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_key_is_named() {
        let text = sample_config_text().replace("local_lr = 0.1\n", "");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("local_lr"), "{err}");
    }

    #[test]
    fn heterogeneous_forbids_size_plans() {
        let text = sample_config_text().replace(
            "kind = heterogeneous",
            "kind = heterogeneous\nn_clients = 10",
        );
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("n_clients"), "{err}");
    }

    #[test]
    fn by_domain_requires_heterogeneous() {
        let text = sample_config_text().replace(
            "kind = heterogeneous",
            "kind = uniform\nn_clients = 4\nplan = equal",
        );
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("by_domain"), "{err}");
    }

    #[test]
    fn named_splits_resolve_to_last_indices() {
        let grid = GridDims::new(3, 5, 7);
        assert_eq!(SplitName::Country.resolve(grid), (DomainAxis::Town, 6));
        assert_eq!(SplitName::Rainy.resolve(grid), (DomainAxis::Weather, 2));
        assert_eq!(SplitName::Bus.resolve(grid), (DomainAxis::Viewpoint, 4));
    }

    #[test]
    fn custom_split_parses_and_serializes() {
        let text = sample_config_text().replace(
            "partition = country",
            "partition = custom\naxis = weather\nindex = 1",
        );
        let config = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(
            config.split.partition,
            SplitName::Custom {
                axis: DomainAxis::Weather,
                index: 1
            }
        );
        let again = ExperimentConfig::parse(&config.serialize()).unwrap();
        assert_eq!(config, again);
    }

    #[test]
    fn range_plan_round_trips() {
        let text = sample_config_text()
            .replace(
                "kind = heterogeneous",
                "kind = class_imbalance\nn_clients = 4\nplan = range\nmin_size = 10\nmax_size = 90",
            )
            .replace("strategies = standard by_domain", "strategies = standard");
        let config = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(
            config.distribution,
            DistributionConfig::ClassImbalance {
                n_clients: 4,
                plan: SizePlanMode::Range { min: 10, max: 90 }
            }
        );
        let again = ExperimentConfig::parse(&config.serialize()).unwrap();
        assert_eq!(config, again);
    }

    #[test]
    fn batch_size_below_two_is_rejected() {
        let text = sample_config_text().replace("local_batch_size = 16", "local_batch_size = 1");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("local_batch_size"), "{err}");
    }

    #[test]
    fn unknown_transform_is_rejected() {
        let text = sample_config_text().replace("transform = identity", "transform = style");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("style"), "{err}");
    }

    #[test]
    fn manifest_source_parses() {
        let text = sample_config_text()
            .replace(
                "source = synthetic\ngrid = 2 3 4\nimages_per_domain = 14\nheight = 8\nwidth = 8\nfeature_dim = 4\nn_classes = 5\nclass_separation = 1.5\ndomain_shift = 1\nnoise_std = 0.3\nzeroed_classes_per_town = 1",
                "source = manifest\nmanifest_path = data/manifest.tsv\nn_classes = 5",
            );
        let config = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(
            config.dataset,
            DatasetConfig::Manifest {
                path: "data/manifest.tsv".into(),
                n_classes: 5
            }
        );
        let again = ExperimentConfig::parse(&config.serialize()).unwrap();
        assert_eq!(config, again);
    }
}
