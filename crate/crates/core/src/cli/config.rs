//! Effective run configuration: defaults, then the config file, then flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::checkpoint::Task;
use crate::data::SplitSpec;
use crate::error::{DpklError, Result};
use crate::trainer::{TrainConfig, TrainMode};

use super::args::{DataArgs, ModelArgs};

/// Everything a run depends on. Serialized verbatim next to every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub task: Task,
    /// Delimited input file; mutually exclusive with `synthetic`.
    pub data: Option<PathBuf>,
    /// `sine`, `step`, `friedman` or `blobs`.
    pub synthetic: Option<String>,
    pub synthetic_rows: usize,
    pub input_dim: usize,
    pub noise_std: f64,
    pub classes: usize,
    pub separation: f64,
    pub target: String,
    pub delimiter: String,
    pub has_header: bool,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    /// Rows left after the labeled and unlabeled slices when unset.
    pub n_test: Option<usize>,
    pub normalize_features: bool,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self::defaults_for(Task::Regression)
    }
}

impl CliConfig {
    pub fn defaults_for(task: Task) -> Self {
        CliConfig {
            task,
            data: None,
            synthetic: None,
            synthetic_rows: 500,
            input_dim: 1,
            noise_std: 0.0,
            classes: 2,
            separation: 6.0,
            target: "y".into(),
            delimiter: ",".into(),
            has_header: true,
            n_labeled: 50,
            n_unlabeled: 0,
            n_test: None,
            normalize_features: true,
            train: match task {
                Task::Regression => TrainConfig::default(),
                Task::Classification => TrainConfig::classification_default(),
            },
        }
    }

    pub fn delimiter_byte(&self) -> Result<u8> {
        match self.delimiter.as_bytes() {
            [b] => Ok(*b),
            b"\\t" => Ok(b'\t'),
            _ => Err(DpklError::Config(format!(
                "delimiter must be a single ASCII character, got `{}`",
                self.delimiter
            ))),
        }
    }

    /// Split sizes for a dataset of `rows` rows.
    pub fn split_spec(&self, rows: usize, seed: u64) -> Result<SplitSpec> {
        let used = self.n_labeled + self.n_unlabeled;
        let n_test = match self.n_test {
            Some(t) => t,
            None => rows.checked_sub(used).ok_or(DpklError::InsufficientRows {
                requested: used,
                available: rows,
            })?,
        };
        Ok(SplitSpec {
            n_labeled: self.n_labeled,
            n_unlabeled: self.n_unlabeled,
            n_test,
            seed,
        })
    }
}

/// Recursively overlays `over` onto `base`, rejecting keys `base` lacks.
fn overlay(base: &mut Map<String, Value>, over: Map<String, Value>, path: &str) -> Result<()> {
    for (k, v) in over {
        let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match base.get_mut(&k) {
            None => return Err(DpklError::Config(format!("unknown config key `{key}`"))),
            Some(Value::Object(inner)) => match v {
                Value::Object(o) => overlay(inner, o, &key)?,
                _ => return Err(DpklError::Config(format!("config key `{key}` must be a table"))),
            },
            Some(slot) => *slot = v,
        }
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path)?;
    let table: toml::Table = toml::from_str(&text)
        .map_err(|e| DpklError::Config(format!("{}: {}", path.display(), e.message())))?;
    match serde_json::to_value(table)? {
        Value::Object(m) => Ok(m),
        _ => Err(DpklError::Internal("toml table did not map to an object".into())),
    }
}

/// Resolves the effective configuration.
pub fn resolve(file: Option<&Path>, data: &DataArgs, model: &ModelArgs) -> Result<CliConfig> {
    let file_map = file.map(read_file).transpose()?.unwrap_or_default();
    let task = match (&data.task, file_map.get("task")) {
        (Some(t), _) => t.parse()?,
        (None, Some(Value::String(t))) => t.parse()?,
        (None, Some(other)) => return Err(DpklError::Config(format!("task must be a string, got {other}"))),
        (None, None) => Task::Regression,
    };
    let m_explicit = model.m.is_some() || file_map.contains_key("m");
    let mut base = match serde_json::to_value(CliConfig::defaults_for(task))? {
        Value::Object(m) => m,
        _ => return Err(DpklError::Internal("config did not serialize to an object".into())),
    };
    overlay(&mut base, file_map, "")?;
    let mut cfg: CliConfig = serde_json::from_value(Value::Object(base))
        .map_err(|e| DpklError::Config(format!("config file: {e}")))?;
    cfg.task = task;
    data.apply(&mut cfg)?;
    model.apply(&mut cfg.train)?;
    if cfg.train.mode == TrainMode::Dkl && !m_explicit {
        cfg.train.m = 1;
    }
    cfg.train.validate()?;
    if cfg.task == Task::Classification && cfg.train.mode == TrainMode::Ssdpkl {
        return Err(DpklError::Config("ssdpkl mode is regression only".into()));
    }
    cfg.delimiter_byte()?;
    Ok(cfg)
}
