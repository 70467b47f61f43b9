//! Classifiers sharing one per-class margin interface.
//!
//! | model            | margin space                         |
//! |------------------|--------------------------------------|
//! | [`DecisionTree`] | leaf class-frequency vector          |
//! | [`BoostedEnsemble`] | raw softmax logits                |
//! | [`Mlp`]          | raw softmax logits                   |

mod boosted;
mod grid;
mod mlp;
mod tree;

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use boosted::{train_boosted, BoostParams, BoostedEnsemble};
pub use grid::{grid_search, CvRow, Grid, GridSearchResult, GridSearchSpec, ModelSpec};
pub use mlp::{train_mlp, LayerGradient, Layer, Mlp, MlpParams, Optimizer};
pub use tree::{train_tree, DecisionTree, Node, Tree, TreeParams};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// A classifier producing one real-valued score per class.
pub trait MarginModel: Sync {
    fn n_features(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn margin_into(&self, x: &[f64], out: &mut [f64]);

    fn margin(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_classes()];
        self.margin_into(x, &mut out);
        out
    }

    /// Arg-max of the margins; ties go to the lowest class index.
    fn predict_class(&self, x: &[f64]) -> usize {
        argmax(&self.margin(x))
    }

    /// Margins of every row of `x` (`n × k`).
    fn margins(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.n_classes()));
        let mut buf = vec![0.0; x.ncols()];
        for (row, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
            for (b, v) in buf.iter_mut().zip(row) {
                *b = *v;
            }
            self.margin_into(&buf, dst.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in v.iter_mut() {
        *x /= z;
    }
}

/// Mean softmax cross-entropy of per-sample margins.
pub(crate) fn log_loss(margins: &[Vec<f64>], labels: &[usize]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(labels)
        .map(|(m, &y)| {
            let top = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = top + m.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
            lse - m[y]
        })
        .sum();
    total / margins.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Tree,
    Boosted,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Tree, ModelKind::Boosted, ModelKind::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Tree => "tree",
            ModelKind::Boosted => "boosted",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tree" => Ok(ModelKind::Tree),
            "boosted" => Ok(ModelKind::Boosted),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::InvalidSpec(format!("unknown model kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Tree(DecisionTree),
    Boosted(BoostedEnsemble),
    Mlp(Mlp),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Tree(_) => ModelKind::Tree,
            TrainedModel::Boosted(_) => ModelKind::Boosted,
            TrainedModel::Mlp(_) => ModelKind::Mlp,
        }
    }

    fn inner(&self) -> &dyn MarginModel {
        match self {
            TrainedModel::Tree(m) => m,
            TrainedModel::Boosted(m) => m,
            TrainedModel::Mlp(m) => m,
        }
    }
}

impl MarginModel for TrainedModel {
    fn n_features(&self) -> usize {
        self.inner().n_features()
    }

    fn n_classes(&self) -> usize {
        self.inner().n_classes()
    }

    fn margin_into(&self, x: &[f64], out: &mut [f64]) {
        self.inner().margin_into(x, out);
    }

    fn margins(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.inner().margins(x)
    }
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    model: TrainedModel,
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let file = ModelFile {
        schema_version: MODEL_SCHEMA_VERSION,
        model: model.clone(),
    };
    fs::write(path, serde_json::to_vec_pretty(&file)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let bytes = fs::read(path)?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes)?;
    let found = raw
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::InvalidModel("missing schema_version".into()))?;
    if found != u64::from(MODEL_SCHEMA_VERSION) {
        return Err(Error::SchemaVersion {
            found: found as u32,
            expected: MODEL_SCHEMA_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_value(raw)?;
    if let TrainedModel::Tree(t) = &file.model {
        t.tree.validate()?;
    }
    if let TrainedModel::Boosted(b) = &file.model {
        for tree in b.rounds.iter().flatten() {
            tree.validate()?;
        }
    }
    Ok(file.model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
    /// Precision had a zero denominator (class never predicted) and is reported as 0.
    pub precision_undefined: bool,
    /// Recall had a zero denominator (class absent) and is reported as 0.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub support: usize,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate_predictions(truth: &[usize], predicted: &[usize], n_classes: usize) -> Evaluation {
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let per_class = (0..n_classes)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let predicted_c: usize = (0..n_classes).map(|t| confusion[t][c]).sum();
            let support: usize = confusion[c].iter().sum();
            ClassMetrics {
                precision: if predicted_c > 0 { tp / predicted_c as f64 } else { 0.0 },
                recall: if support > 0 { tp / support as f64 } else { 0.0 },
                support,
                precision_undefined: predicted_c == 0,
                recall_undefined: support == 0,
            }
        })
        .collect();
    Evaluation {
        per_class,
        accuracy: correct as f64 / truth.len().max(1) as f64,
        support: truth.len(),
        confusion,
    }
}

/// Per-class precision/recall, accuracy and support of `model` on `test`.
pub fn evaluate(model: &dyn MarginModel, test: &Dataset) -> Result<Evaluation> {
    if model.n_features() != test.n_features() {
        return Err(Error::shape(
            format!("{} features", model.n_features()),
            test.n_features(),
        ));
    }
    let margins = model.margins(test.features().view());
    let predicted: Vec<usize> = margins
        .rows()
        .into_iter()
        .map(|r| argmax(r.as_slice().unwrap()))
        .collect();
    Ok(evaluate_predictions(test.labels(), &predicted, test.n_classes().max(model.n_classes())))
}
