//! Run configuration: a JSON document whose keys the command-line flags
//! mirror. Every section has defaults, so `{}` is a complete config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shapvec::models::{Grid, ModelKind, ModelSpec};
use shapvec::viz::FitOn;

use crate::fail::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage derives its own child seed from it.
    pub seed: u64,
    pub data: DataSource,
    pub split: SplitConfig,
    pub models: ModelsConfig,
    pub shap: ShapConfig,
    pub cluster: ClusterConfig,
    pub plots: PlotsConfig,
    /// Run directory. Not part of the config hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSource::Simulate(SimulateConfig::default()),
            split: SplitConfig::default(),
            models: ModelsConfig::default(),
            shap: ShapConfig::default(),
            cluster: ClusterConfig::default(),
            plots: PlotsConfig::default(),
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Simulate(SimulateConfig),
    Csv(CsvConfig),
    Idx(IdxConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_samples: usize,
    pub n_features: usize,
    pub domain_half_width: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n_samples: 1500,
            n_features: 10,
            domain_half_width: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvConfig {
    pub path: PathBuf,
    pub target: String,
    /// Rescale every feature to [0, 1] with training-free min/max.
    #[serde(default)]
    pub min_max_scale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxConfig {
    pub images: PathBuf,
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    /// Keep only these digits (renumbered in the listed order).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            stratified: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub kinds: Vec<ModelKind>,
    pub folds: usize,
    pub stratified_folds: bool,
    /// Replacement hyperparameter grids, keyed by model kind.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub grids: BTreeMap<ModelKind, Grid>,
    /// Fixed hyperparameters; a kind listed here skips the grid search.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub fixed: BTreeMap<ModelKind, ModelSpec>,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            kinds: ModelKind::ALL.to_vec(),
            folds: 5,
            stratified_folds: true,
            grids: BTreeMap::new(),
            fixed: BTreeMap::new(),
        }
    }
}

impl ModelsConfig {
    pub fn grid(&self, kind: ModelKind) -> Grid {
        self.grids.get(&kind).cloned().unwrap_or_else(|| Grid::default_for(kind))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainOn {
    Test,
    Train,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapConfig {
    /// Models to explain; defaults to every trained kind.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<ModelKind>>,
    pub explain_on: ExplainOn,
    /// Kernel SHAP background rows, drawn from the training set.
    pub background: usize,
    pub n_coalitions: usize,
    pub max_evaluations: usize,
}

impl Default for ShapConfig {
    fn default() -> Self {
        Self {
            models: None,
            explain_on: ExplainOn::Test,
            background: 100,
            n_coalitions: 2048,
            max_evaluations: 4_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Model whose SHAP tensor is clustered.
    pub source: ModelKind,
    pub min_cluster_size: usize,
    pub min_samples: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            source: ModelKind::Boosted,
            min_cluster_size: 15,
            min_samples: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotsConfig {
    pub width: u32,
    pub height: u32,
    pub top_n: usize,
    pub fit_on: FitOn,
    /// Rows (positions in the explained set) that get a classical waterfall.
    pub waterfall_samples: Vec<usize>,
    /// Class shown in classical waterfalls; the predicted class when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub waterfall_class: Option<usize>,
    /// Features in the cluster heatmap, taken by mean |SHAP|.
    pub heatmap_features: usize,
}

impl Default for PlotsConfig {
    fn default() -> Self {
        Self {
            width: 800,
            height: 500,
            top_n: 10,
            fit_on: FitOn::Segments,
            waterfall_samples: vec![0],
            waterfall_class: None,
            heatmap_features: 5,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    /// Checks value ranges and that referenced input files exist.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        match &self.data {
            DataSource::Simulate(s) => {
                if s.n_features < 2 || s.n_samples == 0 {
                    return bad(format!(
                        "simulation needs n_samples ≥ 1 and n_features ≥ 2, got {} × {}",
                        s.n_samples, s.n_features
                    ));
                }
            }
            DataSource::Csv(c) => {
                if !c.path.is_file() {
                    return bad(format!("data file {} does not exist", c.path.display()));
                }
            }
            DataSource::Idx(c) => {
                for p in [&c.images, &c.labels] {
                    if !p.is_file() {
                        return bad(format!("data file {} does not exist", p.display()));
                    }
                }
            }
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return bad(format!("split.train_fraction must lie in (0, 1), got {}", self.split.train_fraction));
        }
        if self.models.kinds.is_empty() {
            return bad("models.kinds is empty".into());
        }
        if self.models.folds < 2 {
            return bad(format!("models.folds must be at least 2, got {}", self.models.folds));
        }
        for (kind, grid) in &self.models.grids {
            if grid.kind() != *kind {
                return bad(format!("models.grids.{kind} holds a {} grid", grid.kind()));
            }
        }
        for (kind, spec) in &self.models.fixed {
            if spec.kind() != *kind {
                return bad(format!("models.fixed.{kind} holds {} parameters", spec.kind()));
            }
        }
        if self.shap.background == 0 || self.shap.n_coalitions == 0 {
            return bad("shap.background and shap.n_coalitions must be positive".into());
        }
        if self.cluster.min_cluster_size < 2 || self.cluster.min_samples < 1 {
            return bad("cluster.min_cluster_size must be ≥ 2 and cluster.min_samples ≥ 1".into());
        }
        if self.plots.top_n == 0 || self.plots.width < 100 || self.plots.height < 100 {
            return bad("plots.top_n must be ≥ 1 and plots.width/height ≥ 100".into());
        }
        Ok(())
    }

    pub fn explained_models(&self) -> Vec<ModelKind> {
        self.shap.models.clone().unwrap_or_else(|| self.models.kinds.clone())
    }

    /// SHA-256 of the canonical JSON of every field except `output_dir`.
    pub fn hash(&self) -> String {
        let mut semantic = self.clone();
        semantic.output_dir = None;
        digest(&semantic)
    }
}

/// Hex SHA-256 of a value's canonical JSON. Struct fields serialize in
/// declaration order and maps are ordered, so equal values hash equally.
pub fn digest<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    hex(&Sha256::digest(&bytes))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
