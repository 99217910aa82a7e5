//! The JSON run configuration every command resolves before starting work.

use std::path::{Path, PathBuf};

use chemtext_core::data::SplitPlan;
use chemtext_core::explain::{Cutoffs, ExplainerConfig};
use chemtext_core::model::{ArchClass, HyperParams, TaskSpec, TaskType};
use chemtext_core::seed;
use chemtext_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::dataset::Columns;
use crate::error::{Error, Result};
use crate::reports;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CHEMTEXT_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Precision {
    F32,
    F64,
}

impl TryFrom<u32> for Precision {
    type Error = String;

    fn try_from(bits: u32) -> Result<Self, String> {
        match bits {
            32 => Ok(Precision::F32),
            64 => Ok(Precision::F64),
            other => Err(format!("precision must be 32 or 64, got {other}")),
        }
    }
}

impl From<Precision> for u32 {
    fn from(p: Precision) -> u32 {
        match p {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    /// Defaults to 1/6 for classification and 1/10 for regression.
    pub test_fraction: Option<f64>,
    pub n_folds: usize,
    pub primary_task: Option<usize>,
    pub oversample: bool,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self { test_fraction: None, n_folds: 5, primary_task: None, oversample: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    /// Total trials, the six seed designs included.
    pub n_trials: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self { n_trials: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSettings {
    /// Trained base model file.
    pub base_model: Option<PathBuf>,
    /// Load this explainer instead of training one.
    pub explainer: Option<PathBuf>,
    pub network: ExplainerConfig,
    pub cutoffs: Cutoffs,
    pub top_k: usize,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        Self {
            base_model: None,
            explainer: None,
            network: ExplainerConfig::default(),
            cutoffs: Cutoffs::default(),
            top_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub columns: Columns,
    pub task: TaskType,
    pub arch: ArchClass,
    pub hyper_params: HyperParams,
    /// Accept layer widths between grid points.
    pub off_grid: bool,
    pub train: TrainConfig,
    pub split: SplitSettings,
    pub search: SearchSettings,
    pub explain: ExplainSettings,
    pub out_dir: PathBuf,
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            columns: Columns::default(),
            task: TaskType::Regression,
            arch: ArchClass::CnnGru,
            hyper_params: HyperParams { em_size: 50, conv_filters: Some(192), rnn1_units: 224, rnn2_units: 384 },
            off_grid: false,
            train: TrainConfig::default(),
            split: SplitSettings::default(),
            search: SearchSettings::default(),
            explain: ExplainSettings::default(),
            out_dir: std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from),
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        reports::read_json(path)
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Usage("a dataset is required (--dataset or \"dataset\" in the config)".into()))
    }

    pub fn split_plan(&self, task: &TaskSpec) -> SplitPlan {
        let mut plan = SplitPlan::default_for(task, self.seed);
        if let Some(f) = self.split.test_fraction {
            plan.test_fraction = f;
        }
        plan.n_folds = self.split.n_folds;
        plan.primary_task = self.split.primary_task;
        plan.oversample = self.split.oversample;
        plan
    }

    /// Training settings with the shuffle seed derived from the master seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: seed::derive(self.seed, seed::SHUFFLE, 0), ..self.train }
    }

    /// Explainer settings with the seed derived from the master seed.
    pub fn explainer_config(&self) -> ExplainerConfig {
        ExplainerConfig { seed: seed::derive(self.seed, seed::EXPLAIN, 0), ..self.explain.network.clone() }
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.explain.network.validate()?;
        let hp = &self.hyper_params;
        if self.off_grid {
            hp.check_shape(self.arch)?;
        } else {
            hp.check_grid(self.arch)?;
        }
        let spec = match self.task {
            TaskType::Regression => TaskSpec::regression(),
            TaskType::Classification => TaskSpec::classification(1),
        };
        self.split_plan(&spec).validate()?;
        if self.search.n_trials == 0 {
            return Err(Error::Config("search.n_trials must be positive".into()));
        }
        if self.explain.top_k == 0 {
            return Err(Error::Config("explain.top_k must be positive".into()));
        }
        let c = self.explain.cutoffs;
        if c.insoluble.partial_cmp(&c.soluble) != Some(core::cmp::Ordering::Less) {
            return Err(Error::Config("the insoluble cutoff must lie below the soluble one".into()));
        }
        Ok(())
    }

    /// Writes the resolved configuration as `config.json` in the output
    /// directory, creating it if needed.
    pub fn write_resolved(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let path = self.out_dir.join("config.json");
        reports::write_json(&path, self)?;
        Ok(path)
    }
}
