//! Datasets, the synthetic two-pathway generator, scaling and splitting.

mod io;
mod simulate;

pub use io::{load_csv, load_idx_images, write_csv, CsvLoad, DatasetManifest};
pub use simulate::{class_probabilities, simulate, SimulationSpec};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Feature matrix with integer class labels.
///
/// Rows are samples. Labels lie in `0..class_names.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    feature_names: Vec<String>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = features.dim();
        if n == 0 {
            return Err(Error::InvalidInput("dataset has no samples".into()));
        }
        if p == 0 {
            return Err(Error::InvalidInput("dataset has no features".into()));
        }
        if labels.len() != n {
            return Err(Error::shape(format!("{n} labels"), labels.len()));
        }
        if feature_names.len() != p {
            return Err(Error::shape(format!("{p} feature names"), feature_names.len()));
        }
        let k = class_names.len();
        if k < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 classes, got {k}")));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::InvalidInput(format!("label {bad} outside 0..{k}")));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate feature name `{name}`")));
            }
        }
        Ok(Self {
            features,
            labels,
            feature_names,
            class_names,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_samples()) {
            return Err(Error::OutOfRange {
                index: bad,
                len: self.n_samples(),
            });
        }
        Self::new(
            self.features.select(Axis(0), indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.feature_names.clone(),
            self.class_names.clone(),
        )
    }

    /// Keeps only samples of the listed classes and renumbers them
    /// `0..classes.len()` in the listed order.
    pub fn select_classes(&self, classes: &[usize]) -> Result<Self> {
        let rows: Vec<usize> = (0..self.n_samples())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptyAfterFiltering);
        }
        let labels = rows
            .iter()
            .map(|&i| classes.iter().position(|&c| c == self.labels[i]).unwrap())
            .collect();
        let class_names = classes
            .iter()
            .map(|&c| {
                self.class_names
                    .get(c)
                    .cloned()
                    .ok_or(Error::OutOfRange {
                        index: c,
                        len: self.n_classes(),
                    })
            })
            .collect::<Result<_>>()?;
        Self::new(
            self.features.select(Axis(0), &rows),
            labels,
            self.feature_names.clone(),
            class_names,
        )
    }

    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        Self::new(
            features,
            self.labels.clone(),
            self.feature_names.clone(),
            self.class_names.clone(),
        )
    }
}

/// Per-column affine map onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingMetadata {
    pub min: Vec<f64>,
    /// Column range; constant columns store 1 so they map to 0.
    pub range: Vec<f64>,
}

impl ScalingMetadata {
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.min[j]) / self.range[j]);
        }
        out
    }

    pub fn inverse(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| v * self.range[j] + self.min[j]);
        }
        out
    }
}

/// Linearly rescales every column to `[0, 1]`.
pub fn min_max_scale(ds: &Dataset) -> (Dataset, ScalingMetadata) {
    let x = ds.features();
    let mut min = Vec::with_capacity(ds.n_features());
    let mut range = Vec::with_capacity(ds.n_features());
    for col in x.axis_iter(Axis(1)) {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        min.push(lo);
        range.push(if hi > lo { hi - lo } else { 1.0 });
    }
    let meta = ScalingMetadata { min, range };
    let scaled = ds
        .with_features(meta.apply(x))
        .expect("scaling preserves shape");
    (scaled, meta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            stratified: false,
            seed: 0,
        }
    }
}

/// Row indices of a train/test partition, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(labels: &[usize], n_classes: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "train_fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let n = labels.len();
    let mut rng = rng::stream(spec.seed, "split");
    let mut train = Vec::new();
    if spec.stratified {
        let mut by_class = vec![Vec::new(); n_classes];
        for (i, &y) in labels.iter().enumerate() {
            by_class[y].push(i);
        }
        for (c, members) in by_class.iter().enumerate() {
            if members.len() == 1 {
                return Err(Error::InvalidInput(format!(
                    "class {c} has a single sample; cannot stratify"
                )));
            }
            let take = (spec.train_fraction * members.len() as f64).round() as usize;
            let order = rng::permutation(members.len(), &mut rng);
            train.extend(order[..take].iter().map(|&i| members[i]));
        }
    } else {
        let take = (spec.train_fraction * n as f64).round() as usize;
        let order = rng::permutation(n, &mut rng);
        train.extend_from_slice(&order[..take]);
    }
    train.sort_unstable();
    let mut in_train = vec![false; n];
    for &i in &train {
        in_train[i] = true;
    }
    let test: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidSpec(format!(
            "split of {n} samples at fraction {} leaves an empty side",
            spec.train_fraction
        )));
    }
    Ok(SplitIndices { train, test })
}

/// Splits `ds` into disjoint, exhaustive train and test sets.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let idx = split_indices(ds.labels(), ds.n_classes(), spec)?;
    Ok((ds.subset(&idx.train)?, ds.subset(&idx.test)?))
}
