//! SHAP value tensors and the algorithms that fill them.
//!
//! A [`ShapTensor`] holds one contribution per sample, feature and class
//! (`n × p × k`) plus the per-class base values. For every sample `i` and
//! class `c`, `Σⱼ values[i, j, c] = margin(xᵢ)_c − base_c`.

mod kernel;
mod tree_shap;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use kernel::{kernel_shap, Background, KernelShapConfig};
pub use tree_shap::{tree_shap, tree_shap_values, TreeExplain, TreeTarget};

use crate::error::{Error, Result};
use crate::models::MarginModel;
use crate::subgroup::ClusterLabeling;

/// Where a tensor came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub method: String,
    #[serde(default)]
    pub background: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapTensor {
    values: Array3<f64>,
    base: Vec<f64>,
    sample_ids: Vec<usize>,
    feature_names: Vec<String>,
    class_names: Vec<String>,
    pub provenance: Provenance,
}

impl ShapTensor {
    /// Tensor with default names `x{j}` / `class_{c}` and sample ids `0..n`.
    pub fn new(values: Array3<f64>, base: Vec<f64>) -> Result<Self> {
        let (n, p, k) = values.dim();
        if base.len() != k {
            return Err(Error::shape(format!("{k} base values"), base.len()));
        }
        Ok(Self {
            values,
            base,
            sample_ids: (0..n).collect(),
            feature_names: (0..p).map(|j| format!("x{j}")).collect(),
            class_names: (0..k).map(|c| format!("class_{c}")).collect(),
            provenance: Provenance::default(),
        })
    }

    pub fn with_names(mut self, feature_names: &[String], class_names: &[String]) -> Result<Self> {
        if feature_names.len() != self.n_features() || class_names.len() != self.n_classes() {
            return Err(Error::shape(
                format!("{} features × {} classes", self.n_features(), self.n_classes()),
                format!("{} × {}", feature_names.len(), class_names.len()),
            ));
        }
        self.feature_names = feature_names.to_vec();
        self.class_names = class_names.to_vec();
        Ok(self)
    }

    pub fn with_sample_ids(mut self, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != self.n_samples() {
            return Err(Error::shape(format!("{} sample ids", self.n_samples()), ids.len()));
        }
        self.sample_ids = ids;
        Ok(self)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn sample_ids(&self) -> &[usize] {
        &self.sample_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_samples(&self) -> usize {
        self.values.dim().0
    }

    pub fn n_features(&self) -> usize {
        self.values.dim().1
    }

    pub fn n_classes(&self) -> usize {
        self.values.dim().2
    }

    /// The `p × k` SHAP matrix of one sample.
    pub fn sample(&self, i: usize) -> ArrayView2<'_, f64> {
        self.values.index_axis(Axis(0), i)
    }

    /// `n × (p·k)` matrix; column `j·k + c` holds feature `j`, class `c`.
    pub fn flatten(&self) -> Array2<f64> {
        let (n, p, k) = self.values.dim();
        let contiguous = self.values.as_standard_layout().into_owned();
        contiguous
            .into_shape_with_order((n, p * k))
            .expect("contiguous tensor")
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn unflatten(flat: &Array2<f64>, n_classes: usize, base: Vec<f64>) -> Result<Self> {
        let (n, pk) = flat.dim();
        if n_classes == 0 || pk % n_classes != 0 {
            return Err(Error::shape(format!("multiple of {n_classes} columns"), pk));
        }
        let values = flat
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, pk / n_classes, n_classes))
            .expect("contiguous matrix");
        Self::new(values, base)
    }

    /// `p × k` matrix of mean absolute SHAP values.
    pub fn mean_abs(&self) -> Array2<f64> {
        self.values
            .mapv(f64::abs)
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array2::zeros((self.n_features(), self.n_classes())))
    }

    /// Per-sample `Σⱼ φ − (margin − base)` residuals, `n × k`.
    pub fn additivity_residuals(&self, margins: &Array2<f64>) -> Result<Array2<f64>> {
        if margins.dim() != (self.n_samples(), self.n_classes()) {
            return Err(Error::shape(
                format!("{} × {} margins", self.n_samples(), self.n_classes()),
                format!("{:?}", margins.dim()),
            ));
        }
        let sums = self.values.sum_axis(Axis(1));
        let mut out = sums - margins;
        for mut row in out.rows_mut() {
            for (r, b) in row.iter_mut().zip(&self.base) {
                *r += b;
            }
        }
        Ok(out)
    }

    /// Largest absolute additivity residual of `model` on the explained rows `x`.
    pub fn max_additivity_error(&self, model: &dyn MarginModel, x: ArrayView2<f64>) -> Result<f64> {
        let residuals = self.additivity_residuals(&model.margins(x))?;
        Ok(residuals.iter().fold(0.0, |m, r| m.max(r.abs())))
    }

    /// Rows `indices` as a new tensor.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), indices),
            base: self.base.clone(),
            sample_ids: indices.iter().map(|&i| self.sample_ids[i]).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Writes `<stem>.json` (manifest) and `<stem>.csv` (flattened values,
    /// one row per sample, first column the sample id).
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        let manifest = TensorManifest {
            n_samples: self.n_samples(),
            n_features: self.n_features(),
            n_classes: self.n_classes(),
            layout: LAYOUT.to_string(),
            base: self.base.clone(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
            values_file: format!("{stem}.csv"),
        };
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&manifest)?)?;
        let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(
            dir.join(format!("{stem}.csv")),
        )?));
        let mut header = vec!["sample_id".to_string()];
        for f in &self.feature_names {
            for c in &self.class_names {
                header.push(format!("{f}|{c}"));
            }
        }
        writer.write_record(&header)?;
        for (row, id) in self.flatten().rows().into_iter().zip(&self.sample_ids) {
            let mut record = vec![id.to_string()];
            record.extend(row.iter().map(|v| v.to_string()));
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: TensorManifest =
            serde_json::from_slice(&fs::read(dir.join(format!("{stem}.json")))?)?;
        if manifest.layout != LAYOUT {
            return Err(Error::InvalidInput(format!("unknown layout `{}`", manifest.layout)));
        }
        let (n, p, k) = (manifest.n_samples, manifest.n_features, manifest.n_classes);
        let mut reader = csv::Reader::from_path(dir.join(&manifest.values_file))?;
        let mut ids = Vec::with_capacity(n);
        let mut flat = Vec::with_capacity(n * p * k);
        for record in reader.records() {
            let record = record?;
            if record.len() != 1 + p * k {
                return Err(Error::shape(1 + p * k, record.len()));
            }
            ids.push(
                record[0]
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad sample id `{}`", &record[0])))?,
            );
            for cell in record.iter().skip(1) {
                flat.push(
                    cell.parse()
                        .map_err(|_| Error::InvalidInput(format!("bad value `{cell}`")))?,
                );
            }
        }
        let values = Array3::from_shape_vec((ids.len(), p, k), flat)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        if ids.len() != n {
            return Err(Error::shape(n, ids.len()));
        }
        Ok(Self::new(values, manifest.base)?
            .with_names(&manifest.feature_names, &manifest.class_names)?
            .with_sample_ids(ids)?
            .with_provenance(manifest.provenance))
    }
}

const LAYOUT: &str = "feature-major: column j*k + c";

#[derive(Serialize, Deserialize)]
struct TensorManifest {
    n_samples: usize,
    n_features: usize,
    n_classes: usize,
    layout: String,
    base: Vec<f64>,
    feature_names: Vec<String>,
    class_names: Vec<String>,
    provenance: Provenance,
    values_file: String,
}

/// Mean SHAP matrix of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMean {
    pub label: i64,
    pub size: usize,
    /// `p × k`.
    pub mean: Array2<f64>,
}

/// Per-cluster mean SHAP matrices, noise (label −1) excluded, ordered by label.
pub fn cluster_mean(t: &ShapTensor, labels: &ClusterLabeling) -> Result<Vec<ClusterMean>> {
    if labels.labels.len() != t.n_samples() {
        return Err(Error::shape(format!("{} labels", t.n_samples()), labels.labels.len()));
    }
    let mut out = Vec::with_capacity(labels.n_clusters);
    for cluster in 0..labels.n_clusters {
        let members: Vec<usize> = (0..t.n_samples())
            .filter(|&i| labels.labels[i] == cluster as i64)
            .collect();
        if members.is_empty() {
            return Err(Error::EmptyGroup(format!("cluster {cluster} has no members")));
        }
        let mean = t
            .values
            .select(Axis(0), &members)
            .mean_axis(Axis(0))
            .expect("non-empty");
        out.push(ClusterMean {
            label: cluster as i64,
            size: members.len(),
            mean,
        });
    }
    Ok(out)
}

/// Model margins minus base for each explained row: the quantity SHAP values
/// of a row sum to.
pub fn explained_deviation(
    model: &dyn MarginModel,
    x: ArrayView2<f64>,
    base: &[f64],
) -> Array2<f64> {
    let mut m = model.margins(x);
    for mut row in m.rows_mut() {
        for (v, b) in row.iter_mut().zip(base) {
            *v -= b;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    fn toy() -> ShapTensor {
        let values = Array3::from_shape_vec((1, 2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        ShapTensor::new(values, vec![0.0; 3]).unwrap()
    }

    #[test]
    fn flatten_layout() {
        let flat = toy().flatten();
        assert_eq!(flat, array![[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]);
        let back = ShapTensor::unflatten(&flat, 3, vec![0.0; 3]).unwrap();
        assert_eq!(back.values(), toy().values());
    }

    #[test]
    fn flatten_single_class_is_identity() {
        let values = Array3::from_shape_fn((4, 3, 1), |(i, j, _)| (i * 3 + j) as f64);
        let t = ShapTensor::new(values.clone(), vec![0.0]).unwrap();
        let flat = t.flatten();
        assert_eq!(flat.dim(), (4, 3));
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(flat[[i, j]], values[[i, j, 0]]);
            }
        }
    }

    #[test]
    fn mean_abs_cases() {
        let zero = ShapTensor::new(Array3::zeros((5, 2, 3)), vec![0.0; 3]).unwrap();
        assert!(zero.mean_abs().iter().all(|&v| v == 0.0));
        let values = Array3::from_shape_vec((1, 2, 1), vec![-1.5, 2.0]).unwrap();
        let single = ShapTensor::new(values, vec![0.0]).unwrap();
        assert_eq!(single.mean_abs(), array![[1.5], [2.0]]);
    }

    #[test]
    fn cluster_means() {
        let values = Array3::from_shape_vec(
            (4, 1, 2),
            vec![1.0, 2.0, 3.0, 4.0, 10.0, 0.0, 20.0, 0.0],
        )
        .unwrap();
        let t = ShapTensor::new(values, vec![0.0; 2]).unwrap();
        let labels = ClusterLabeling::from_labels(vec![0, 0, 1, -1]);
        let means = cluster_mean(&t, &labels).unwrap();
        assert_eq!(means.len(), 2);
        assert_eq!(means[0].mean, array![[2.0, 3.0]]);
        assert_eq!(means[0].size, 2);
        // Singleton cluster is that sample; noise is excluded.
        assert_eq!(means[1].mean, array![[10.0, 0.0]]);

        let everything = ClusterLabeling::from_labels(vec![0; 4]);
        let global = cluster_mean(&t, &everything).unwrap();
        assert_eq!(global[0].mean, t.values().mean_axis(Axis(0)).unwrap());
    }

    #[test]
    fn empty_cluster_is_an_error() {
        let t = toy();
        let labels = ClusterLabeling {
            labels: vec![-1],
            n_clusters: 1,
            stability: vec![0.0],
        };
        assert!(matches!(cluster_mean(&t, &labels), Err(Error::EmptyGroup(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let values = Array3::from_shape_fn((3, 2, 2), |(i, j, c)| (i as f64 + 0.1) * (j as f64 - 0.7) / (c as f64 + 3.0));
        let t = ShapTensor::new(values, vec![0.25, -1.0 / 3.0])
            .unwrap()
            .with_sample_ids(vec![10, 11, 12])
            .unwrap()
            .with_provenance(Provenance {
                model: "m".into(),
                method: "tree".into(),
                background: None,
            });
        t.save(dir.path(), "phi").unwrap();
        assert_eq!(ShapTensor::load(dir.path(), "phi").unwrap(), t);
    }
}
