//! Stacked mean-|SHAP| bar charts and cluster-mean heatmaps.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::svg::{num, Anchor, Svg};
use super::PlotSpec;
use crate::error::{Error, Result};
use crate::subgroup::ClusterLabeling;

/// Feature indices ordered by descending row total of a `p × k` matrix
/// (ties by index), truncated to `n`.
pub fn top_features(meanabs: ArrayView2<f64>, n: usize) -> Vec<usize> {
    let totals: Vec<f64> = meanabs.rows().into_iter().map(|r| r.sum()).collect();
    let mut order: Vec<usize> = (0..totals.len()).collect();
    order.sort_by(|&a, &b| totals[b].total_cmp(&totals[a]).then(a.cmp(&b)));
    order.truncate(n);
    order
}

/// One bar per feature (the `top_n` largest by total), stacked by class and
/// sorted by descending height.
pub fn stacked_bar(
    meanabs: ArrayView2<f64>,
    feature_names: &[String],
    class_names: &[String],
    spec: &PlotSpec,
) -> Result<String> {
    spec.validate()?;
    let (p, k) = meanabs.dim();
    if feature_names.len() != p || class_names.len() != k {
        return Err(Error::shape(
            format!("{p} feature and {k} class names"),
            format!("{} and {}", feature_names.len(), class_names.len()),
        ));
    }
    let order = top_features(meanabs, spec.top_n);
    let tallest = order
        .first()
        .map_or(0.0, |&j| meanabs.row(j).sum())
        .max(f64::MIN_POSITIVE);

    let mut svg = Svg::new(spec.width, spec.height);
    let legend_w = if k > 1 { 140.0 } else { 0.0 };
    let (left, right, top, bottom) = (70.0, svg.width() - legend_w - 20.0, 50.0, svg.height() - 90.0);
    let title = if spec.title.is_empty() { "Mean |SHAP value|" } else { &spec.title };
    svg.text(svg.width() / 2.0, 28.0, 16.0, Anchor::Middle, title);
    svg.line(left, bottom, right, bottom, "#333333", 1.0, "");
    svg.line(left, top, left, bottom, "#333333", 1.0, "");
    let scale = (bottom - top) / (tallest * 1.05);
    for i in 0..=4 {
        let v = tallest * 1.05 * f64::from(i) / 4.0;
        let y = bottom - v * scale;
        svg.line(left - 4.0, y, left, y, "#333333", 1.0, "");
        svg.text(left - 7.0, y + 4.0, 10.0, Anchor::End, &num(v));
    }

    let slot = (right - left) / order.len().max(1) as f64;
    for (pos, &j) in order.iter().enumerate() {
        let x = left + slot * pos as f64 + slot * 0.15;
        let mut y = bottom;
        for c in 0..k {
            let h = meanabs[[j, c]] * scale;
            svg.rect(x, y - h, slot * 0.7, h, spec.color(c), "");
            y -= h;
        }
        let cx = x + slot * 0.35;
        svg.raw(&format!(
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end" transform="rotate(-45 {} {})">{}</text>"#,
            num(cx),
            num(bottom + 14.0),
            num(cx),
            num(bottom + 14.0),
            super::svg::escape(&feature_names[j])
        ));
    }
    if k > 1 {
        let lx = svg.width() - legend_w;
        for (c, name) in class_names.iter().enumerate() {
            let ly = top + 10.0 + 18.0 * c as f64;
            svg.rect(lx, ly - 10.0, 12.0, 12.0, spec.color(c), "");
            svg.text(lx + 18.0, ly, 12.0, Anchor::Start, name);
        }
    }
    let y_label = if spec.y_label.is_empty() { "mean |SHAP|" } else { &spec.y_label };
    svg.raw(&format!(
        r#"<text x="16" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        num((top + bottom) / 2.0),
        num((top + bottom) / 2.0),
        super::svg::escape(y_label)
    ));
    Ok(svg.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFeatureMeans {
    /// `clusters × features` mean raw values.
    pub means: Array2<f64>,
    /// Mean of each selected feature over all samples (noise included).
    pub global: Vec<f64>,
    pub sizes: Vec<usize>,
    pub features: Vec<usize>,
}

pub fn cluster_feature_means(
    x: ArrayView2<f64>,
    labels: &ClusterLabeling,
    features: &[usize],
) -> Result<ClusterFeatureMeans> {
    if labels.labels.len() != x.nrows() {
        return Err(Error::shape(x.nrows(), labels.labels.len()));
    }
    if let Some(&j) = features.iter().find(|&&j| j >= x.ncols()) {
        return Err(Error::OutOfRange {
            index: j,
            len: x.ncols(),
        });
    }
    let sizes = labels.sizes();
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyGroup(format!("cluster {c} has no members")));
    }
    let mut means = Array2::zeros((labels.n_clusters, features.len()));
    for (i, &l) in labels.labels.iter().enumerate() {
        if l >= 0 {
            for (f, &j) in features.iter().enumerate() {
                means[[l as usize, f]] += x[[i, j]];
            }
        }
    }
    for (c, &s) in sizes.iter().enumerate() {
        means.row_mut(c).mapv_inplace(|v| v / s as f64);
    }
    let global = features
        .iter()
        .map(|&j| x.column(j).mean().unwrap_or(0.0))
        .collect();
    Ok(ClusterFeatureMeans {
        means,
        global,
        sizes,
        features: features.to_vec(),
    })
}

fn diverging(t: f64) -> String {
    // t ∈ [−1, 1]: blue → white → red.
    let t = t.clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        (214.0, 39.0, 40.0)
    } else {
        (31.0, 119.0, 180.0)
    };
    let a = t.abs();
    let mix = |c: f64| (255.0 + (c - 255.0) * a).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(r), mix(g), mix(b))
}

/// Cluster × feature grid of mean raw values, coloured by deviation from the
/// feature's global mean (scaled per feature by the largest deviation).
pub fn cluster_heatmap(
    x: ArrayView2<f64>,
    feature_names: &[String],
    labels: &ClusterLabeling,
    features: &[usize],
    spec: &PlotSpec,
) -> Result<String> {
    spec.validate()?;
    let m = cluster_feature_means(x, labels, features)?;
    let (rows, cols) = m.means.dim();
    let mut svg = Svg::new(spec.width, spec.height);
    let (left, right, top, bottom) = (110.0, svg.width() - 20.0, 60.0, svg.height() - 70.0);
    let title = if spec.title.is_empty() { "Mean feature values by cluster" } else { &spec.title };
    svg.text(svg.width() / 2.0, 28.0, 16.0, Anchor::Middle, title);
    let cw = (right - left) / cols.max(1) as f64;
    let ch = (bottom - top) / rows.max(1) as f64;
    for f in 0..cols {
        let spread = (0..rows)
            .map(|c| (m.means[[c, f]] - m.global[f]).abs())
            .fold(0.0, f64::max);
        for c in 0..rows {
            let dev = m.means[[c, f]] - m.global[f];
            let t = if spread > 0.0 { dev / spread } else { 0.0 };
            let (x0, y0) = (left + cw * f as f64, top + ch * c as f64);
            svg.rect(x0, y0, cw, ch, &diverging(t), r##" stroke="#ffffff""##);
            svg.text(x0 + cw / 2.0, y0 + ch / 2.0 + 4.0, 11.0, Anchor::Middle, &num(m.means[[c, f]]));
        }
        let name = feature_names.get(features[f]).cloned().unwrap_or_default();
        svg.text(left + cw * (f as f64 + 0.5), bottom + 18.0, 11.0, Anchor::Middle, &name);
    }
    for c in 0..rows {
        svg.text(
            left - 8.0,
            top + ch * (c as f64 + 0.5) + 4.0,
            11.0,
            Anchor::End,
            &format!("cluster {c} (n={})", m.sizes[c]),
        );
    }
    svg.text(
        (left + right) / 2.0,
        bottom + 45.0,
        10.0,
        Anchor::Middle,
        "colour: deviation from the feature's overall mean",
    );
    Ok(svg.finish())
}
