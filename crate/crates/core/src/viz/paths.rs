//! High-dimensional waterfall paths.
//!
//! For a group of samples, the mean `p × k` SHAP matrix is read as `p`
//! vectors in class space. Laid end to end from the origin in order of
//! decreasing Euclidean norm they trace a polyline whose endpoint is the
//! group's mean `margin − base` vector. Paths are drawn after a linear
//! projection to the plane of the two leading principal directions.

use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::svg::{escape, num, padded, Anchor, Frame, Svg};
use super::PlotSpec;
use crate::error::{Error, Result};
use crate::shap::ShapTensor;
use crate::subgroup::{pca_fit, ClusterLabeling, PcaModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    /// `None` for the aggregated remaining-features segment.
    pub feature: Option<usize>,
    pub name: String,
    pub segment: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallPath {
    pub group: String,
    pub size: usize,
    pub anchor: Vec<f64>,
    pub entries: Vec<PathEntry>,
    pub endpoint: Vec<f64>,
}

impl WaterfallPath {
    /// `anchor, anchor + s₁, anchor + s₁ + s₂, …`; the last is the endpoint.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.entries.len() + 1);
        let mut at = self.anchor.clone();
        out.push(at.clone());
        for e in &self.entries {
            for (a, s) in at.iter_mut().zip(&e.segment) {
                *a += s;
            }
            out.push(at.clone());
        }
        out
    }
}

/// Paths for one figure, with the shared base vector and the number of
/// samples left out as noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<WaterfallPath>,
    pub base: Vec<f64>,
    pub class_names: Vec<String>,
    pub noise: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Grouping {
    /// One path per cluster; noise (−1) is excluded.
    Labels(ClusterLabeling),
    /// One path per listed sample row.
    Samples(Vec<usize>),
}

impl Grouping {
    /// One path per class of `classes` (e.g. true or predicted labels).
    pub fn per_class(classes: &[usize]) -> Self {
        Grouping::Labels(ClusterLabeling::from_labels(
            classes.iter().map(|&c| c as i64).collect(),
        ))
    }
}

fn path_from_matrix(
    group: String,
    size: usize,
    mean: &Array2<f64>,
    feature_names: &[String],
    top_n: Option<usize>,
) -> WaterfallPath {
    let (p, k) = mean.dim();
    let norms: Vec<f64> = (0..p)
        .map(|j| mean.row(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let shown = top_n.map_or(p, |n| n.clamp(1, p));
    let mut entries: Vec<PathEntry> = order[..shown]
        .iter()
        .map(|&j| PathEntry {
            feature: Some(j),
            name: feature_names[j].clone(),
            segment: mean.row(j).to_vec(),
        })
        .collect();
    if shown < p {
        let mut rest = vec![0.0; k];
        for &j in &order[shown..] {
            for (r, v) in rest.iter_mut().zip(mean.row(j)) {
                *r += v;
            }
        }
        entries.push(PathEntry {
            feature: None,
            name: format!("{} remaining features", p - shown),
            segment: rest,
        });
    }
    let mut path = WaterfallPath {
        group,
        size,
        anchor: vec![0.0; k],
        entries,
        endpoint: Vec::new(),
    };
    path.endpoint = path.vertices().pop().expect("anchor vertex");
    path
}

/// Builds one origin-anchored path per group. With `top_n`, features past
/// the first `top_n` segments are merged into a single final segment, which
/// keeps the endpoint unchanged.
pub fn build_paths(t: &ShapTensor, grouping: &Grouping, top_n: Option<usize>) -> Result<PathSet> {
    let mut paths = Vec::new();
    let mut noise = 0;
    match grouping {
        Grouping::Labels(labels) => {
            if labels.labels.len() != t.n_samples() {
                return Err(Error::shape(t.n_samples(), labels.labels.len()));
            }
            noise = labels.noise_count();
            for m in crate::shap::cluster_mean(t, labels)? {
                paths.push(path_from_matrix(
                    format!("cluster {}", m.label),
                    m.size,
                    &m.mean,
                    t.feature_names(),
                    top_n,
                ));
            }
        }
        Grouping::Samples(rows) => {
            if rows.is_empty() {
                return Err(Error::EmptyGroup("no samples selected".into()));
            }
            for &i in rows {
                if i >= t.n_samples() {
                    return Err(Error::OutOfRange {
                        index: i,
                        len: t.n_samples(),
                    });
                }
                paths.push(path_from_matrix(
                    format!("sample {}", t.sample_ids()[i]),
                    1,
                    &t.values().index_axis(Axis(0), i).to_owned(),
                    t.feature_names(),
                    top_n,
                ));
            }
        }
    }
    Ok(PathSet {
        paths,
        base: t.base().to_vec(),
        class_names: t.class_names().to_vec(),
        noise,
    })
}

/// Which vectors the projection's principal directions are fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitOn {
    #[default]
    Segments,
    Vertices,
}

impl std::str::FromStr for FitOn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segments" => Ok(FitOn::Segments),
            "vertices" => Ok(FitOn::Vertices),
            other => Err(Error::InvalidSpec(format!("unknown fit set `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPath {
    pub group: String,
    pub size: usize,
    /// Segment labels, one per step.
    pub features: Vec<String>,
    /// Projected vertices, starting at the projected origin.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPaths {
    pub paths: Vec<ProjectedPath>,
    /// Projected base vector, drawn as a reference marker.
    pub base: (f64, f64),
    pub pca: Option<PcaModel>,
    pub axis_labels: (String, String),
    pub noise: usize,
    pub warning: Option<String>,
}

/// Projects every path through one shared linear map.
///
/// With `k ≥ 2` the map is the two leading principal directions of the
/// pooled segments (or vertices), applied without centering so the origin
/// stays at the origin and projected segments still chain. With `k = 1` the
/// path is drawn as (step, cumulative value) and a warning is attached.
pub fn project_paths(set: &PathSet, fit_on: FitOn) -> Result<ProjectedPaths> {
    let k = set.base.len();
    let project_all = |f: &dyn Fn(&[f64]) -> (f64, f64)| -> Vec<ProjectedPath> {
        set.paths
            .iter()
            .map(|p| ProjectedPath {
                group: p.group.clone(),
                size: p.size,
                features: p.entries.iter().map(|e| e.name.clone()).collect(),
                points: p.vertices().iter().map(|v| f(v)).collect(),
            })
            .collect()
    };
    if k < 2 {
        let paths = set
            .paths
            .iter()
            .map(|p| ProjectedPath {
                group: p.group.clone(),
                size: p.size,
                features: p.entries.iter().map(|e| e.name.clone()).collect(),
                points: p
                    .vertices()
                    .iter()
                    .enumerate()
                    .map(|(step, v)| (step as f64, v[0]))
                    .collect(),
            })
            .collect();
        return Ok(ProjectedPaths {
            paths,
            base: (0.0, set.base.first().copied().unwrap_or(0.0)),
            pca: None,
            axis_labels: ("step".into(), set.class_names.first().cloned().unwrap_or_default()),
            noise: set.noise,
            warning: Some("single output: paths drawn as step versus cumulative value".into()),
        });
    }

    let mut fit_rows: Vec<Vec<f64>> = Vec::new();
    for p in &set.paths {
        match fit_on {
            FitOn::Segments => fit_rows.extend(p.entries.iter().map(|e| e.segment.clone())),
            FitOn::Vertices => fit_rows.extend(p.vertices()),
        }
    }
    let mut distinct = fit_rows.clone();
    distinct.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidInput(
            "projection needs at least two distinct vectors".into(),
        ));
    }
    let fit = Array2::from_shape_fn((fit_rows.len(), k), |(i, j)| fit_rows[i][j]);
    let r = 2.min(fit.nrows() - 1);
    let pca = pca_fit(fit.view(), r)?;
    let load = &pca.loadings;
    let map = |v: &[f64]| -> (f64, f64) {
        let a: f64 = (0..k).map(|j| v[j] * load[[j, 0]]).sum();
        let b: f64 = if r > 1 {
            (0..k).map(|j| v[j] * load[[j, 1]]).sum()
        } else {
            0.0
        };
        (a, b)
    };
    let paths = project_all(&map);
    let ratio = pca.explained_variance_ratio();
    let label = |i: usize| match ratio.get(i) {
        Some(r) => format!("PC{} ({:.1}%)", i + 1, 100.0 * r),
        None => format!("PC{}", i + 1),
    };
    Ok(ProjectedPaths {
        paths,
        base: map(&set.base),
        axis_labels: (label(0), label(1)),
        pca: Some(pca),
        noise: set.noise,
        warning: None,
    })
}

/// One polyline per group with per-segment arrowheads, an origin marker, the
/// projected base vector and a legend naming each group's leading features.
pub fn render_paths(projected: &ProjectedPaths, spec: &PlotSpec) -> Result<String> {
    spec.validate()?;
    let mut svg = Svg::new(spec.width, spec.height);
    let legend_w = 230.0;
    let (left, right, top, bottom) = (70.0, svg.width() - legend_w - 20.0, 50.0, svg.height() - 60.0);

    let mut xs = vec![0.0, projected.base.0];
    let mut ys = vec![0.0, projected.base.1];
    for p in &projected.paths {
        for &(x, y) in &p.points {
            xs.push(x);
            ys.push(y);
        }
    }
    let (mut x0, mut x1) = padded(xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max), 0.08);
    let (mut y0, mut y1) = padded(ys.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(f64::NEG_INFINITY, f64::max), 0.08);
    if projected.pca.is_some() {
        // Equal scale on both axes so directions and lengths read truthfully.
        let sx = (x1 - x0) / (right - left);
        let sy = (y1 - y0) / (bottom - top);
        let s = sx.max(sy);
        let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        x0 = cx - s * (right - left) / 2.0;
        x1 = cx + s * (right - left) / 2.0;
        y0 = cy - s * (bottom - top) / 2.0;
        y1 = cy + s * (bottom - top) / 2.0;
    }
    let frame = Frame {
        x0,
        x1,
        y0,
        y1,
        left,
        right,
        top,
        bottom,
    };

    let title = if spec.title.is_empty() {
        "High-dimensional waterfall paths"
    } else {
        &spec.title
    };
    svg.text(svg.width() / 2.0, 28.0, 16.0, Anchor::Middle, title);
    svg.rect(left, top, right - left, bottom - top, "none", r##" stroke="#999999""##);
    for i in 0..=4 {
        let t = f64::from(i) / 4.0;
        let vx = x0 + (x1 - x0) * t;
        let vy = y0 + (y1 - y0) * t;
        svg.text(frame.px(vx), bottom + 18.0, 10.0, Anchor::Middle, &num(vx));
        svg.text(left - 6.0, frame.py(vy) + 4.0, 10.0, Anchor::End, &num(vy));
    }
    let (xl, yl) = (
        if spec.x_label.is_empty() { &projected.axis_labels.0 } else { &spec.x_label },
        if spec.y_label.is_empty() { &projected.axis_labels.1 } else { &spec.y_label },
    );
    svg.text((left + right) / 2.0, bottom + 40.0, 12.0, Anchor::Middle, xl);
    svg.raw(&format!(
        r#"<text x="18" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        num((top + bottom) / 2.0),
        num((top + bottom) / 2.0),
        escape(yl)
    ));

    // Origin cross-hairs.
    let (ox, oy) = (frame.px(0.0), frame.py(0.0));
    svg.line(ox, top, ox, bottom, "#dddddd", 1.0, "");
    svg.line(left, oy, right, oy, "#dddddd", 1.0, "");

    for (g, p) in projected.paths.iter().enumerate() {
        let color = spec.color(g).to_string();
        svg.arrow_marker(g, &color);
        for w in p.points.windows(2) {
            let ((ax, ay), (bx, by)) = (w[0], w[1]);
            svg.line(
                frame.px(ax),
                frame.py(ay),
                frame.px(bx),
                frame.py(by),
                &color,
                2.0,
                &format!(r#" marker-end="url(#arrow-{g})""#),
            );
        }
        if let Some(&(ex, ey)) = p.points.last() {
            svg.circle(frame.px(ex), frame.py(ey), 3.5, &color, "");
        }
    }
    svg.circle(ox, oy, 4.0, "black", "");
    svg.text(ox + 6.0, oy - 6.0, 10.0, Anchor::Start, "origin");
    let (bx, by) = (frame.px(projected.base.0), frame.py(projected.base.1));
    svg.polygon(
        &[(bx, by - 5.0), (bx + 5.0, by), (bx, by + 5.0), (bx - 5.0, by)],
        "none",
        r#" stroke="black""#,
    );
    svg.text(bx + 7.0, by + 4.0, 10.0, Anchor::Start, "base");

    // Legend.
    let lx = svg.width() - legend_w;
    let mut ly = top + 10.0;
    for (g, p) in projected.paths.iter().enumerate() {
        svg.rect(lx, ly - 9.0, 12.0, 12.0, spec.color(g), "");
        svg.text(lx + 18.0, ly + 1.0, 12.0, Anchor::Start, &format!("{} (n={})", p.group, p.size));
        ly += 15.0;
        let lead: Vec<&str> = p.features.iter().take(3).map(String::as_str).collect();
        if !lead.is_empty() {
            svg.text(lx + 18.0, ly + 1.0, 10.0, Anchor::Start, &lead.join(", "));
            ly += 18.0;
        }
    }
    if projected.noise > 0 {
        svg.text(lx, ly + 4.0, 11.0, Anchor::Start, &format!("noise: {} samples not shown", projected.noise));
        ly += 16.0;
    }
    if let Some(w) = &projected.warning {
        svg.text(lx, ly + 4.0, 10.0, Anchor::Start, w);
    }
    Ok(svg.finish())
}

/// Sidecar CSV with one row per plotted vertex: `group,step,feature,x,y`.
pub fn write_path_coordinates(projected: &ProjectedPaths, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group", "step", "feature", "x", "y"])?;
    for p in &projected.paths {
        for (step, &(x, y)) in p.points.iter().enumerate() {
            let feature = if step == 0 { "origin" } else { &p.features[step - 1] };
            w.write_record([
                p.group.clone(),
                step.to_string(),
                feature.to_string(),
                x.to_string(),
                y.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
