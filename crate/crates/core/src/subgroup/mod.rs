//! Embedding and subgroup discovery over flattened SHAP matrices.

mod hdbscan;
mod pca;

use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use hdbscan::{
    core_distances, hdbscan, hdbscan_tree, minimum_spanning_tree, mutual_reachability,
    pairwise_distances, single_linkage, CondensedChild, CondensedEdge, HdbscanParams,
    HdbscanTree, Merge,
};
pub use pca::{pca_fit, pca_transform, PcaModel};

use crate::error::{Error, Result};

/// Per-sample cluster labels, `-1` marking noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    pub labels: Vec<i64>,
    pub n_clusters: usize,
    /// Stability of each cluster, indexed by label.
    pub stability: Vec<f64>,
}

impl ClusterLabeling {
    /// Labeling from raw labels; `n_clusters` is one past the largest label
    /// and stabilities are zero.
    pub fn from_labels(labels: Vec<i64>) -> Self {
        let n_clusters = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0)) as usize;
        Self {
            labels,
            n_clusters,
            stability: vec![0.0; n_clusters],
        }
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l < 0).count()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == cluster as i64)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }

    /// Relabels clusters in order of their smallest member index.
    pub fn canonical(&self) -> Self {
        let mut map = vec![-1i64; self.n_clusters];
        let mut next = 0;
        let mut stability = vec![0.0; self.n_clusters];
        for &l in &self.labels {
            if l >= 0 && map[l as usize] < 0 {
                map[l as usize] = next;
                stability[next as usize] = self.stability[l as usize];
                next += 1;
            }
        }
        Self {
            labels: self
                .labels
                .iter()
                .map(|&l| if l < 0 { -1 } else { map[l as usize] })
                .collect(),
            n_clusters: self.n_clusters,
            stability,
        }
    }

    /// CSV with columns `sample_id,label,stability` (stability empty for noise).
    pub fn write_csv(&self, sample_ids: &[usize], path: impl AsRef<Path>) -> Result<()> {
        if sample_ids.len() != self.labels.len() {
            return Err(Error::shape(self.labels.len(), sample_ids.len()));
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sample_id", "label", "stability"])?;
        for (&id, &l) in sample_ids.iter().zip(&self.labels) {
            let stability = if l >= 0 {
                self.stability[l as usize].to_string()
            } else {
                String::new()
            };
            w.write_record([id.to_string(), l.to_string(), stability])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<(Vec<usize>, Self)> {
        let mut r = csv::Reader::from_path(path)?;
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut stability: Vec<f64> = Vec::new();
        for record in r.records() {
            let record = record?;
            let bad = |what: &str| Error::InvalidInput(format!("bad {what} in labeling CSV"));
            ids.push(record.get(0).and_then(|v| v.parse().ok()).ok_or_else(|| bad("sample_id"))?);
            let l: i64 = record.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("label"))?;
            if l >= 0 {
                let s: f64 = record
                    .get(2)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("stability"))?;
                if stability.len() <= l as usize {
                    stability.resize(l as usize + 1, 0.0);
                }
                stability[l as usize] = s;
            }
            labels.push(l);
        }
        let mut labeling = Self::from_labels(labels);
        stability.resize(labeling.n_clusters, 0.0);
        labeling.stability = stability;
        Ok((ids, labeling))
    }
}

/// Writes `sample_id,pc1,…` rows.
pub fn write_scores_csv(
    sample_ids: &[usize],
    scores: ArrayView2<f64>,
    path: impl AsRef<Path>,
) -> Result<()> {
    if sample_ids.len() != scores.nrows() {
        return Err(Error::shape(scores.nrows(), sample_ids.len()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_string()];
    header.extend((1..=scores.ncols()).map(|c| format!("pc{c}")));
    w.write_record(&header)?;
    for (&id, row) in sample_ids.iter().zip(scores.rows()) {
        let mut rec = vec![id.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Purity {
    /// `contingency[cluster][truth]`.
    pub contingency: Vec<Vec<usize>>,
    /// Majority truth value of each cluster (lowest on ties).
    pub majority: Vec<usize>,
    /// Majority fraction of each cluster.
    pub purity: Vec<f64>,
    /// Noise counts per truth value.
    pub noise: Vec<usize>,
}

/// Per-cluster majority fraction against integer ground truth.
pub fn cluster_purity(labels: &ClusterLabeling, truth: &[usize]) -> Result<Purity> {
    if truth.len() != labels.labels.len() {
        return Err(Error::shape(labels.labels.len(), truth.len()));
    }
    let n_truth = truth.iter().copied().max().map_or(0, |m| m + 1);
    let mut contingency = vec![vec![0usize; n_truth]; labels.n_clusters];
    let mut noise = vec![0usize; n_truth];
    for (&l, &t) in labels.labels.iter().zip(truth) {
        if l < 0 {
            noise[t] += 1;
        } else {
            contingency[l as usize][t] += 1;
        }
    }
    let mut majority = Vec::with_capacity(labels.n_clusters);
    let mut purity = Vec::with_capacity(labels.n_clusters);
    for row in &contingency {
        let total: usize = row.iter().sum();
        let mut best = 0;
        for (t, &c) in row.iter().enumerate() {
            if c > row[best] {
                best = t;
            }
        }
        majority.push(best);
        purity.push(if total > 0 { row[best] as f64 / total as f64 } else { 0.0 });
    }
    Ok(Purity {
        contingency,
        majority,
        purity,
        noise,
    })
}
