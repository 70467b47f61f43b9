//! SVG renderings of SHAP tensors: classical waterfalls, high-dimensional
//! (clustered) waterfall paths, stacked mean-|SHAP| bars and cluster
//! heatmaps, plus a scatter for 2-D embeddings. All output is byte-deterministic.

mod charts;
mod paths;
mod scatter;
pub mod svg;
mod waterfall;

use serde::{Deserialize, Serialize};

pub use charts::{
    cluster_feature_means, cluster_heatmap, stacked_bar, top_features, ClusterFeatureMeans,
};
pub use paths::{
    build_paths, project_paths, render_paths, write_path_coordinates, FitOn, Grouping, PathEntry,
    PathSet, ProjectedPath, ProjectedPaths, WaterfallPath,
};
pub use scatter::scatter;
pub use waterfall::{classical_waterfall, waterfall_bars, ClassicalWaterfall, WaterfallBar};

use crate::error::{Error, Result};

/// Ten-colour qualitative palette.
pub const DEFAULT_PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub width: u32,
    pub height: u32,
    /// Features shown individually; the rest are aggregated.
    pub top_n: usize,
    pub palette: Vec<String>,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

impl Default for PlotSpec {
    fn default() -> Self {
        Self {
            width: 800,
            height: 500,
            top_n: 10,
            palette: DEFAULT_PALETTE.iter().map(|c| c.to_string()).collect(),
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
        }
    }
}

impl PlotSpec {
    pub fn validate(&self) -> Result<()> {
        if self.top_n == 0 {
            return Err(Error::InvalidSpec("top_n must be at least 1".into()));
        }
        if self.palette.is_empty() {
            return Err(Error::InvalidSpec("palette must not be empty".into()));
        }
        if self.width < 100 || self.height < 100 {
            return Err(Error::InvalidSpec("plots must be at least 100×100 pixels".into()));
        }
        Ok(())
    }

    pub fn color(&self, i: usize) -> &str {
        &self.palette[i % self.palette.len()]
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = title.into();
        self
    }
}
