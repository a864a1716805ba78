//! TOML run configuration with `--set section.key=value` overrides.
//!
//! ```toml
//! [data]
//! series = "series.csv"
//! distances = "distances.csv"   # or: graph = "graph.txt"
//! nodes = "nodes.txt"
//! kappa = 3000.0
//! output_dir = "run"
//!
//! [model]
//! units = 16
//!
//! [train]
//! epochs = 20
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use dcrnn::autodiff::AdamConfig;
use dcrnn::seq2seq::{LossKind, ModelConfig};
use dcrnn::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub series: Option<PathBuf>,
    /// Triplet graph file written by `build-graph`.
    pub graph: Option<PathBuf>,
    /// Distance list and node list, used when `graph` is absent.
    pub distances: Option<PathBuf>,
    pub nodes: Option<PathBuf>,
    pub kappa: f64,
    /// Cells equal to this value are treated as missing.
    pub missing_sentinel: f64,
    /// Disable to keep every numeric cell, including the sentinel.
    pub mask_sentinel: bool,
    pub split: [f64; 3],
    pub time_of_day: bool,
    pub minutes_per_step: usize,
    pub output_dir: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            series: None,
            graph: None,
            distances: None,
            nodes: None,
            kappa: f64::INFINITY,
            missing_sentinel: 0.0,
            mask_sentinel: true,
            split: [0.7, 0.1, 0.2],
            time_of_day: false,
            minutes_per_step: 5,
            output_dir: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub history: usize,
    pub horizon: usize,
    pub layers: usize,
    pub units: usize,
    pub k_max: usize,
    pub conv_mode: String,
    pub curriculum: String,
    pub temporal_mode: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            history: m.history,
            horizon: m.horizon,
            layers: m.layers,
            units: m.units,
            k_max: m.k_max,
            conv_mode: m.conv_mode.name().into(),
            curriculum: m.curriculum.name().into(),
            temporal_mode: m.temporal_mode.name().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub tau: f64,
    pub seed: u64,
    pub lr_decay_start: usize,
    pub lr_decay_period: usize,
    pub lr_decay_factor: f64,
    /// Zero or negative disables clipping.
    pub max_grad_norm: f64,
    pub loss: String,
    pub target_train_loss: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            patience: t.patience,
            tau: t.tau,
            seed: t.seed,
            lr_decay_start: t.lr_decay_start,
            lr_decay_period: t.lr_decay_period,
            lr_decay_factor: t.lr_decay_factor,
            max_grad_norm: t.max_grad_norm.unwrap_or(0.0),
            loss: t.loss.name().into(),
            target_train_loss: t.target_train_loss,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses `raw` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn parse_field<T: std::str::FromStr<Err = dcrnn::Error>>(what: &str, raw: &str) -> Result<T, CliError> {
    raw.parse().map_err(|e| config_err(format!("model.{what}: {e}")))
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = path.split_last().expect("split yields one item");
    let mut node = table;
    for p in parents {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("`{p}` in `{key}` is not a section")))?;
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads `path`, applies `overrides` in order and resolves relative
    /// paths against the config's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut table: toml::Table =
            toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = table
            .try_into()
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.resolve(base);
        Ok(cfg)
    }

    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        let m = &self.model;
        let cfg = ModelConfig {
            history: m.history,
            horizon: m.horizon,
            input_dim: 1 + usize::from(self.data.time_of_day),
            layers: m.layers,
            units: m.units,
            k_max: m.k_max,
            conv_mode: parse_field("conv_mode", &m.conv_mode)?,
            curriculum: parse_field("curriculum", &m.curriculum)?,
            temporal_mode: parse_field("temporal_mode", &m.temporal_mode)?,
        };
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let loss: LossKind = t
            .loss
            .parse()
            .map_err(|e| config_err(format!("train.loss: {e}")))?;
        let cfg = TrainConfig {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            patience: t.patience,
            tau: t.tau,
            seed: t.seed,
            lr_decay_start: t.lr_decay_start,
            lr_decay_period: t.lr_decay_period,
            lr_decay_factor: t.lr_decay_factor,
            max_grad_norm: (t.max_grad_norm > 0.0).then_some(t.max_grad_norm),
            loss,
            target_train_loss: t.target_train_loss,
            adam: AdamConfig::default(),
        };
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }
}

impl DataSection {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.series,
            &mut self.graph,
            &mut self.distances,
            &mut self.nodes,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn sentinel(&self) -> Option<f64> {
        self.mask_sentinel.then_some(self.missing_sentinel)
    }
}
