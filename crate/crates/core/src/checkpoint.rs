//! Versioned JSON checkpoints: trained particles plus everything needed to
//! predict on new raw data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::Classifier;
use crate::data::NormStats;
use crate::error::{DpklError, Result};
use crate::latentkernel::RffBasis;
use crate::linalg::Matrix;
use crate::net::ParticleEnsemble;
use crate::trainer::{Regressor, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Regression,
    Classification,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = DpklError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            other => Err(DpklError::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum Model {
    Regression {
        ensemble: ParticleEnsemble,
        /// Basis used during training; predictions use the exact kernel.
        rff_basis: Option<RffBasis>,
        /// Normalized labeled data the GP conditions on.
        train_x: Matrix,
        train_y: Vec<f64>,
    },
    Classification {
        classifier: Classifier,
        classes: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub build: String,
    pub config: TrainConfig,
    pub target_column: String,
    pub feature_names: Option<Vec<String>>,
    pub stats: NormStats,
    pub model: Model,
}

impl Checkpoint {
    pub fn task(&self) -> Task {
        match self.model {
            Model::Regression { .. } => Task::Regression,
            Model::Classification { .. } => Task::Classification,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.stats.dim()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => {
                return Err(DpklError::Schema(format!(
                    "checkpoint format {v} is not supported (expected {CHECKPOINT_VERSION})"
                )))
            }
            None => return Err(DpklError::Schema("not a checkpoint: missing format_version".into())),
        }
        Ok(serde_json::from_value(value)?)
    }

    /// Exact-kernel GP regressor over the stored labeled data.
    pub fn regressor(&self) -> Result<Regressor> {
        match &self.model {
            Model::Regression {
                ensemble,
                train_x,
                train_y,
                ..
            } => Regressor::new(
                ensemble.clone(),
                self.config.kernel,
                None,
                self.config.noise_var,
                self.config.base_jitter,
                train_x,
                train_y,
            ),
            Model::Classification { .. } => Err(DpklError::Schema("checkpoint holds a classifier".into())),
        }
    }

    /// Checks a raw query's column count against the training schema.
    pub fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(DpklError::Schema(format!(
                "query has {cols} feature columns, checkpoint expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }
}
