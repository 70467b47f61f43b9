//! Pipeline stages. Each reads its upstream artifacts from the run
//! directory, writes its own, and records itself in the manifest.
//!
//! Stage hashes chain: a stage's hash covers its own config section and the
//! hashes of the stages it reads, so a changed upstream setting invalidates
//! everything downstream of it.

use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use shapvec::data::{
    load_csv, load_idx_images, min_max_scale, simulate as simulate_data, split_indices, write_csv, Dataset,
    DatasetManifest, SimulationSpec, SplitIndices, SplitSpec,
};
use shapvec::models::{
    evaluate, grid_search, load_model, save_model, CvRow, Evaluation, Grid, GridSearchSpec, ModelKind, ModelSpec,
    TrainedModel,
};
use shapvec::rng::child_seed;
use shapvec::shap::{kernel_shap, tree_shap, Background, KernelShapConfig, ShapTensor};
use shapvec::subgroup::{cluster_purity, hdbscan, pca_fit, pca_transform, write_scores_csv, ClusterLabeling, HdbscanParams, Purity};
use shapvec::viz::{
    build_paths, classical_waterfall, cluster_heatmap, project_paths, render_paths, scatter, stacked_bar,
    top_features, write_path_coordinates, Grouping, PlotSpec,
};

use crate::config::{digest, DataSource, ExplainOn, RunConfig};
use crate::fail::{CliError, CliResult};
use crate::rundir::{read_json, write_json, RunDir};

pub const DATASET_CSV: &str = "data/dataset.csv";
pub const DATASET_JSON: &str = "data/dataset.json";
pub const SPLIT_JSON: &str = "data/split.json";
pub const LABELS_CSV: &str = "clusters/labels.csv";
pub const CLUSTER_JSON: &str = "clusters/summary.json";
pub const HEATMAP_SVG: &str = "plots/heatmap.svg";
const TARGET_COLUMN: &str = "class";

pub fn model_path(kind: ModelKind) -> String {
    format!("models/{kind}.json")
}

pub fn metrics_path(kind: ModelKind) -> String {
    format!("models/{kind}-metrics.json")
}

pub fn tensor_stem(kind: ModelKind) -> String {
    kind.name().to_string()
}

pub fn tensor_json(kind: ModelKind) -> String {
    format!("shap/{kind}.json")
}

pub fn explain_summary_path(kind: ModelKind) -> String {
    format!("shap/{kind}-summary.json")
}

// ---------------------------------------------------------------------------
// Stage hashes

pub fn data_hash(c: &RunConfig) -> String {
    digest(&("data", c.seed, &c.data))
}

pub fn train_hash(c: &RunConfig, kind: ModelKind) -> String {
    let m = &c.models;
    let how = match m.fixed.get(&kind) {
        Some(spec) => serde_json::to_value(spec),
        None => serde_json::to_value(m.grid(kind)),
    }
    .expect("model settings serialize");
    digest(&("train", data_hash(c), &c.split, m.folds, m.stratified_folds, kind, how))
}

pub fn explain_hash(c: &RunConfig, kind: ModelKind) -> String {
    let s = &c.shap;
    digest(&(
        "explain",
        train_hash(c, kind),
        s.explain_on,
        s.background,
        s.n_coalitions,
        s.max_evaluations,
    ))
}

pub fn cluster_hash(c: &RunConfig) -> String {
    digest(&("cluster", explain_hash(c, c.cluster.source), &c.cluster))
}

pub fn plot_hash(c: &RunConfig, stage: &str, kind: Option<ModelKind>) -> String {
    let upstream = kind.map(|k| explain_hash(c, k));
    let clusters = (stage != "bar").then(|| cluster_hash(c));
    digest(&(stage, upstream, clusters, &c.plots))
}

pub fn stage_name(stage: &str, kind: ModelKind) -> String {
    format!("{stage}/{kind}")
}

// ---------------------------------------------------------------------------
// Shared helpers

fn elapsed(start: Instant) -> f64 {
    // Millisecond resolution keeps manifests readable.
    (start.elapsed().as_secs_f64() * 1000.0).round() / 1000.0
}

fn plot_spec(c: &RunConfig, title: impl Into<String>) -> PlotSpec {
    PlotSpec {
        width: c.plots.width,
        height: c.plots.height,
        top_n: c.plots.top_n,
        ..PlotSpec::default()
    }
    .with_title(title)
}

fn require_data(run: &RunDir) -> CliResult<Dataset> {
    let command = match run.config.data {
        DataSource::Simulate(_) => "simulate",
        _ => "load",
    };
    let hash = data_hash(&run.config);
    let manifest: DatasetManifest = read_json(&run.require("data", &hash, DATASET_JSON, command)?)?;
    let csv = run.require("data", &hash, DATASET_CSV, command)?;
    let loaded = load_csv(&csv, TARGET_COLUMN)?;
    // The CSV reader numbers classes by first appearance; restore the
    // stored order.
    let remap: Vec<usize> = loaded
        .dataset
        .class_names()
        .iter()
        .map(|name| {
            manifest
                .class_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| CliError::Other(format!("class `{name}` missing from {DATASET_JSON}")))
        })
        .collect::<CliResult<_>>()?;
    let labels = loaded.dataset.labels().iter().map(|&l| remap[l]).collect();
    Ok(Dataset::new(
        loaded.dataset.features().clone(),
        labels,
        manifest.feature_names,
        manifest.class_names,
    )?)
}

fn require_model(run: &RunDir, kind: ModelKind) -> CliResult<TrainedModel> {
    let path = run.require(&stage_name("train", kind), &train_hash(&run.config, kind), &model_path(kind), "train")?;
    Ok(load_model(path)?)
}

fn require_tensor(run: &RunDir, kind: ModelKind) -> CliResult<ShapTensor> {
    run.require(
        &stage_name("explain", kind),
        &explain_hash(&run.config, kind),
        &tensor_json(kind),
        "explain",
    )?;
    Ok(ShapTensor::load(run.path("shap"), &tensor_stem(kind))?)
}

fn require_labels(run: &RunDir, ids: &[usize]) -> CliResult<ClusterLabeling> {
    let path = run.require("cluster", &cluster_hash(&run.config), LABELS_CSV, "cluster")?;
    let (stored, labels) = ClusterLabeling::read_csv(path)?;
    if stored != ids {
        return Err(CliError::Config(format!(
            "{LABELS_CSV} covers different samples than the tensor being plotted; \
             explain every model on the same rows (shap.explain_on)"
        )));
    }
    Ok(labels)
}

/// Row indices (into the stored dataset) of the explained set.
fn explained_rows(split: &SplitIndices, on: ExplainOn, n: usize) -> Vec<usize> {
    match on {
        ExplainOn::Test => split.test.clone(),
        ExplainOn::Train => split.train.clone(),
        ExplainOn::All => (0..n).collect(),
    }
}

// ---------------------------------------------------------------------------
// Data

fn store_dataset(run: &mut RunDir, ds: &Dataset, mut manifest: DatasetManifest, start: Instant) -> CliResult<()> {
    write_csv(ds, run.prepare(DATASET_CSV)?, TARGET_COLUMN)?;
    manifest.class_counts = ds.class_counts();
    write_json(&run.prepare(DATASET_JSON)?, &manifest)?;
    let hash = data_hash(&run.config);
    run.record("data", hash, vec![DATASET_CSV.into(), DATASET_JSON.into()], elapsed(start))
}

pub fn simulate(run: &mut RunDir) -> CliResult<()> {
    let start = Instant::now();
    let DataSource::Simulate(s) = &run.config.data else {
        return Err(CliError::Config("the configured data source is not `simulate`".into()));
    };
    let spec = SimulationSpec {
        n_samples: s.n_samples,
        n_features: s.n_features,
        domain_half_width: s.domain_half_width,
        noise_coefficients: None,
        seed: child_seed(run.config.seed, "simulate"),
    };
    let ds = simulate_data(&spec)?;
    let mut manifest = DatasetManifest::describe(&ds, "simulate");
    manifest.source = format!("simulate (seed {})", spec.seed);
    store_dataset(run, &ds, manifest, start)
}

pub fn load(run: &mut RunDir) -> CliResult<()> {
    let start = Instant::now();
    match run.config.data.clone() {
        DataSource::Simulate(_) => Err(CliError::Config(
            "`load` needs a csv or idx data source (--csv/--target or --idx-images/--idx-labels)".into(),
        )),
        DataSource::Csv(c) => {
            let loaded = load_csv(&c.path, &c.target)?;
            let mut manifest = DatasetManifest::describe(&loaded.dataset, c.path.display().to_string());
            manifest.dropped_rows = loaded.dropped_rows;
            let ds = if c.min_max_scale {
                let (scaled, meta) = min_max_scale(&loaded.dataset);
                manifest.scaling = Some(meta);
                scaled
            } else {
                loaded.dataset
            };
            store_dataset(run, &ds, manifest, start)
        }
        DataSource::Idx(c) => {
            let mut ds = load_idx_images(&c.images, &c.labels, c.limit)?;
            if let Some(classes) = &c.classes {
                ds = ds.select_classes(classes)?;
            }
            let manifest = DatasetManifest::describe(&ds, c.images.display().to_string());
            store_dataset(run, &ds, manifest, start)
        }
    }
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub kind: ModelKind,
    pub spec: ModelSpec,
    pub test: Evaluation,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cross_validation: Vec<CvRow>,
}

pub fn train(run: &mut RunDir, kinds: &[ModelKind]) -> CliResult<()> {
    let ds = require_data(run)?;
    let c = run.config.clone();
    let split = split_indices(
        ds.labels(),
        ds.n_classes(),
        &SplitSpec {
            train_fraction: c.split.train_fraction,
            stratified: c.split.stratified,
            seed: child_seed(c.seed, "split"),
        },
    )?;
    write_json(&run.prepare(SPLIT_JSON)?, &split)?;
    let train_set = ds.subset(&split.train)?;
    let test_set = ds.subset(&split.test)?;
    let mlp_seed = child_seed(c.seed, "train/mlp");

    for &kind in kinds {
        let start = Instant::now();
        let (spec, cross_validation) = match c.models.fixed.get(&kind) {
            Some(spec) => {
                let mut spec = spec.clone();
                if let ModelSpec::Mlp(p) = &mut spec {
                    p.seed = mlp_seed;
                }
                (spec, Vec::new())
            }
            None => {
                let mut grid = c.models.grid(kind);
                if let Grid::Mlp { seed, .. } = &mut grid {
                    *seed = mlp_seed;
                }
                let result = grid_search(
                    &train_set,
                    &GridSearchSpec {
                        grid,
                        n_folds: c.models.folds,
                        stratified: c.models.stratified_folds,
                        seed: child_seed(c.seed, &format!("train/{kind}/folds")),
                    },
                )?;
                (result.best, result.table)
            }
        };
        let model = spec.train(&train_set)?;
        let test = evaluate(&model, &test_set)?;
        save_model(&model, run.prepare(&model_path(kind))?)?;
        write_json(
            &run.prepare(&metrics_path(kind))?,
            &ModelMetrics {
                kind,
                spec,
                test,
                cross_validation,
            },
        )?;
        run.record(
            &stage_name("train", kind),
            train_hash(&c, kind),
            vec![SPLIT_JSON.into(), model_path(kind), metrics_path(kind)],
            elapsed(start),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Explanation

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainSummary {
    pub kind: ModelKind,
    pub method: String,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub max_additivity_error: f64,
}

pub fn explain(run: &mut RunDir, kinds: &[ModelKind]) -> CliResult<()> {
    let c = run.config.clone();
    let ds = require_data(run)?;
    for &kind in kinds {
        let start = Instant::now();
        let model = require_model(run, kind)?;
        let split: SplitIndices = read_json(&run.path(SPLIT_JSON))?;
        let rows = explained_rows(&split, c.shap.explain_on, ds.n_samples());
        let x = ds.features().select(Axis(0), &rows);
        let tensor = match kind {
            ModelKind::Tree | ModelKind::Boosted => tree_shap(&model, x.view())?,
            ModelKind::Mlp => {
                let train_x = ds.features().select(Axis(0), &split.train);
                let size = c.shap.background.min(train_x.nrows());
                let bg = Background::sample(
                    train_x.view(),
                    size,
                    child_seed(c.seed, &format!("explain/{kind}/background")),
                )?;
                let config = KernelShapConfig {
                    n_coalitions: c.shap.n_coalitions,
                    max_evaluations: c.shap.max_evaluations,
                    seed: child_seed(c.seed, &format!("explain/{kind}")),
                    ..KernelShapConfig::default()
                };
                kernel_shap(&model, x.view(), &bg, None, &config)?
            }
        };
        let max_additivity_error = tensor.max_additivity_error(&model, x.view())?;
        let tensor = tensor
            .with_names(ds.feature_names(), ds.class_names())?
            .with_sample_ids(rows)?;
        std::fs::create_dir_all(run.path("shap"))?;
        tensor.save(run.path("shap"), &tensor_stem(kind))?;
        let summary_path = explain_summary_path(kind);
        write_json(
            &run.path(&summary_path),
            &ExplainSummary {
                kind,
                method: tensor.provenance.method.clone(),
                n_samples: tensor.n_samples(),
                n_features: tensor.n_features(),
                n_classes: tensor.n_classes(),
                max_additivity_error,
            },
        )?;
        run.record(
            &stage_name("explain", kind),
            explain_hash(&c, kind),
            vec![tensor_json(kind), format!("shap/{kind}.csv"), summary_path],
            elapsed(start),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Clustering and embedding

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub source: ModelKind,
    pub min_cluster_size: usize,
    pub min_samples: usize,
    pub n_clusters: usize,
    pub noise: usize,
    pub sizes: Vec<usize>,
    pub stability: Vec<f64>,
    /// Agreement with the ground-truth classes, when the data carry them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purity: Option<Purity>,
}

pub fn cluster(run: &mut RunDir) -> CliResult<()> {
    let start = Instant::now();
    let c = run.config.clone();
    let source = c.cluster.source;
    let tensor = require_tensor(run, source)?;
    let ds = require_data(run)?;
    let labels = hdbscan(
        tensor.flatten().view(),
        &HdbscanParams {
            min_cluster_size: c.cluster.min_cluster_size,
            min_samples: c.cluster.min_samples,
        },
    )?;
    labels.write_csv(tensor.sample_ids(), run.prepare(LABELS_CSV)?)?;
    let truth: Vec<usize> = tensor.sample_ids().iter().map(|&i| ds.labels()[i]).collect();
    let purity = if ds.n_classes() > 0 {
        Some(cluster_purity(&labels, &truth)?)
    } else {
        None
    };
    write_json(
        &run.path(CLUSTER_JSON),
        &ClusterSummary {
            source,
            min_cluster_size: c.cluster.min_cluster_size,
            min_samples: c.cluster.min_samples,
            n_clusters: labels.n_clusters,
            noise: labels.noise_count(),
            sizes: labels.sizes(),
            stability: labels.stability.clone(),
            purity,
        },
    )?;
    run.record("cluster", cluster_hash(&c), vec![LABELS_CSV.into(), CLUSTER_JSON.into()], elapsed(start))
}

fn cluster_names(labels: &ClusterLabeling) -> Vec<String> {
    (0..labels.n_clusters).map(|c| format!("cluster {}", c + 1)).collect()
}

pub fn embed(run: &mut RunDir, kinds: &[ModelKind]) -> CliResult<()> {
    let c = run.config.clone();
    let ds = require_data(run)?;
    for &kind in kinds {
        let start = Instant::now();
        let tensor = require_tensor(run, kind)?;
        let labels = require_labels(run, tensor.sample_ids())?;
        let flat = tensor.flatten();
        if flat.nrows() < 3 {
            return Err(CliError::Config(format!("embedding needs at least 3 explained samples, got {}", flat.nrows())));
        }
        let pca = pca_fit(flat.view(), 2.min(flat.ncols()))?;
        let mut scores = pca_transform(&pca, flat.view())?;
        if scores.ncols() < 2 {
            scores = ndarray::concatenate![Axis(1), scores, Array2::zeros((flat.nrows(), 1))];
        }
        let scores_path = format!("embed/{kind}-scores.csv");
        write_scores_csv(tensor.sample_ids(), scores.view(), run.prepare(&scores_path)?)?;

        let truth: Vec<i64> = tensor.sample_ids().iter().map(|&i| ds.labels()[i] as i64).collect();
        let by_class = format!("embed/{kind}-class.svg");
        let spec = plot_spec(&c, format!("PCA of {kind} SHAP vectors, by class"));
        std::fs::write(run.path(&by_class), scatter(scores.view(), &truth, ds.class_names(), &spec)?)?;
        let by_cluster = format!("embed/{kind}-cluster.svg");
        let spec = plot_spec(&c, format!("PCA of {kind} SHAP vectors, by {} cluster", c.cluster.source));
        std::fs::write(
            run.path(&by_cluster),
            scatter(scores.view(), &labels.labels, &cluster_names(&labels), &spec)?,
        )?;
        run.record(
            &stage_name("embed", kind),
            plot_hash(&c, "embed", Some(kind)),
            vec![scores_path, by_class, by_cluster],
            elapsed(start),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Plots

/// Class with the largest reconstructed margin `base + Σφ`.
fn predicted_class(t: &ShapTensor, sample: usize) -> usize {
    let s = t.sample(sample);
    let margins: Vec<f64> = (0..t.n_classes()).map(|c| t.base()[c] + s.column(c).sum()).collect();
    shapvec::models::argmax(&margins)
}

pub fn waterfall(run: &mut RunDir, kinds: &[ModelKind]) -> CliResult<()> {
    let c = run.config.clone();
    for &kind in kinds {
        let start = Instant::now();
        let tensor = require_tensor(run, kind)?;
        let labels = require_labels(run, tensor.sample_ids())?;
        let mut artifacts = Vec::new();
        std::fs::create_dir_all(run.path("plots"))?;
        for &pos in &c.plots.waterfall_samples {
            if pos >= tensor.n_samples() {
                return Err(CliError::Config(format!(
                    "plots.waterfall_samples: position {pos} is beyond the {} explained samples",
                    tensor.n_samples()
                )));
            }
            let class = match c.plots.waterfall_class {
                Some(k) if k >= tensor.n_classes() => {
                    return Err(CliError::Config(format!("plots.waterfall_class {k} out of range")))
                }
                Some(k) => k,
                None => predicted_class(&tensor, pos),
            };
            let id = tensor.sample_ids()[pos];
            let spec = plot_spec(
                &c,
                format!("{kind}: sample {id}, {}", tensor.class_names()[class]),
            );
            let rel = format!("plots/waterfall-{kind}-{id}.svg");
            std::fs::write(run.path(&rel), classical_waterfall(&tensor, pos, Some(class), &spec)?)?;
            artifacts.push(rel);
        }

        let paths = build_paths(&tensor, &Grouping::Labels(labels), Some(c.plots.top_n))?;
        let projected = project_paths(&paths, c.plots.fit_on)?;
        if let Some(w) = &projected.warning {
            eprintln!("warning: {w}");
        }
        let spec = plot_spec(&c, format!("{kind}: clustered waterfall paths"));
        let svg_rel = format!("plots/paths-{kind}.svg");
        std::fs::write(run.path(&svg_rel), render_paths(&projected, &spec)?)?;
        let csv_rel = format!("plots/paths-{kind}.csv");
        write_path_coordinates(&projected, run.path(&csv_rel))?;
        artifacts.push(svg_rel);
        artifacts.push(csv_rel);
        run.record(
            &stage_name("waterfall", kind),
            plot_hash(&c, "waterfall", Some(kind)),
            artifacts,
            elapsed(start),
        )?;
    }
    Ok(())
}

pub fn bar(run: &mut RunDir, kinds: &[ModelKind]) -> CliResult<()> {
    let c = run.config.clone();
    for &kind in kinds {
        let start = Instant::now();
        let tensor = require_tensor(run, kind)?;
        let spec = plot_spec(&c, format!("{kind}: mean |SHAP value| by class"));
        let svg = stacked_bar(tensor.mean_abs().view(), tensor.feature_names(), tensor.class_names(), &spec)?;
        let rel = format!("plots/bar-{kind}.svg");
        std::fs::write(run.prepare(&rel)?, svg)?;
        run.record(&stage_name("bar", kind), plot_hash(&c, "bar", Some(kind)), vec![rel], elapsed(start))?;
    }
    Ok(())
}

pub fn heatmap(run: &mut RunDir) -> CliResult<()> {
    let start = Instant::now();
    let c = run.config.clone();
    let tensor = require_tensor(run, c.cluster.source)?;
    let labels = require_labels(run, tensor.sample_ids())?;
    let ds = require_data(run)?;
    let x = ds.features().select(Axis(0), tensor.sample_ids());
    let features = top_features(tensor.mean_abs().view(), c.plots.heatmap_features.max(1));
    let spec = plot_spec(&c, "Mean feature values by cluster");
    let svg = cluster_heatmap(x.view(), ds.feature_names(), &labels, &features, &spec)?;
    std::fs::write(run.prepare(HEATMAP_SVG)?, svg)?;
    run.record("heatmap", plot_hash(&c, "heatmap", None), vec![HEATMAP_SVG.into()], elapsed(start))
}

/// Every stage a complete run has, with the hash it must carry.
pub fn expected_stages(c: &RunConfig) -> Vec<(String, String)> {
    let mut out = vec![("data".to_string(), data_hash(c))];
    for &k in &c.models.kinds {
        out.push((stage_name("train", k), train_hash(c, k)));
    }
    let explained = c.explained_models();
    for &k in &explained {
        out.push((stage_name("explain", k), explain_hash(c, k)));
    }
    out.push(("cluster".into(), cluster_hash(c)));
    for stage in ["embed", "waterfall", "bar"] {
        for &k in &explained {
            out.push((stage_name(stage, k), plot_hash(c, stage, Some(k))));
        }
    }
    out.push(("heatmap".into(), plot_hash(c, "heatmap", None)));
    out
}
