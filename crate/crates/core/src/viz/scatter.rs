//! Two-dimensional scatter of embedding scores (e.g. PCA of flattened SHAP
//! vectors), coloured by group.

use ndarray::ArrayView2;

use super::svg::{num, padded, Anchor, Frame, Svg};
use super::PlotSpec;
use crate::error::{Error, Result};

const NOISE_COLOUR: &str = "#c7c7c7";

/// Scatter of the first two columns of `scores`. `groups[i]` indexes
/// `group_names`; a negative group is drawn in grey underneath the rest and
/// listed as noise.
pub fn scatter(scores: ArrayView2<f64>, groups: &[i64], group_names: &[String], spec: &PlotSpec) -> Result<String> {
    spec.validate()?;
    let (n, d) = scores.dim();
    if d < 2 {
        return Err(Error::shape("at least 2 score columns", d));
    }
    if groups.len() != n {
        return Err(Error::shape(n, groups.len()));
    }
    if let Some(&g) = groups.iter().find(|&&g| g >= group_names.len() as i64) {
        return Err(Error::OutOfRange {
            index: g as usize,
            len: group_names.len(),
        });
    }

    let mut svg = Svg::new(spec.width, spec.height);
    let legend_w = 150.0;
    let (left, right, top, bottom) = (70.0, svg.width() - legend_w - 20.0, 50.0, svg.height() - 60.0);
    let fold = |col: usize, f: fn(f64, f64) -> f64, init: f64| scores.column(col).iter().copied().fold(init, f);
    let (x0, x1) = padded(fold(0, f64::min, f64::INFINITY), fold(0, f64::max, f64::NEG_INFINITY), 0.05);
    let (y0, y1) = padded(fold(1, f64::min, f64::INFINITY), fold(1, f64::max, f64::NEG_INFINITY), 0.05);
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

    let title = if spec.title.is_empty() { "Embedding" } else { &spec.title };
    svg.text(svg.width() / 2.0, 28.0, 16.0, Anchor::Middle, title);
    svg.rect(left, top, right - left, bottom - top, "none", r##" stroke="#999999""##);
    for i in 0..=4 {
        let t = f64::from(i) / 4.0;
        let (vx, vy) = (x0 + (x1 - x0) * t, y0 + (y1 - y0) * t);
        svg.text(frame.px(vx), bottom + 18.0, 10.0, Anchor::Middle, &num(vx));
        svg.text(left - 6.0, frame.py(vy) + 4.0, 10.0, Anchor::End, &num(vy));
    }
    let xl = if spec.x_label.is_empty() { "PC1" } else { &spec.x_label };
    let yl = if spec.y_label.is_empty() { "PC2" } else { &spec.y_label };
    svg.text((left + right) / 2.0, bottom + 40.0, 12.0, Anchor::Middle, xl);
    svg.raw(&format!(
        r#"<text x="18" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        num((top + bottom) / 2.0),
        num((top + bottom) / 2.0),
        super::svg::escape(yl)
    ));

    // Noise first so clustered points stay visible on top.
    for pass_noise in [true, false] {
        for (i, &g) in groups.iter().enumerate() {
            if (g < 0) != pass_noise {
                continue;
            }
            let fill = if g < 0 { NOISE_COLOUR } else { spec.color(g as usize) };
            svg.circle(frame.px(scores[[i, 0]]), frame.py(scores[[i, 1]]), 2.5, fill, r#" fill-opacity="0.8""#);
        }
    }

    let lx = svg.width() - legend_w;
    let mut row = 0.0;
    for (g, name) in group_names.iter().enumerate() {
        let count = groups.iter().filter(|&&l| l == g as i64).count();
        let ly = top + 10.0 + 18.0 * row;
        svg.circle(lx + 6.0, ly - 4.0, 5.0, spec.color(g), "");
        svg.text(lx + 18.0, ly, 12.0, Anchor::Start, &format!("{name} (n={count})"));
        row += 1.0;
    }
    let noise = groups.iter().filter(|&&g| g < 0).count();
    if noise > 0 {
        let ly = top + 10.0 + 18.0 * row;
        svg.circle(lx + 6.0, ly - 4.0, 5.0, NOISE_COLOUR, "");
        svg.text(lx + 18.0, ly, 12.0, Anchor::Start, &format!("noise (n={noise})"));
    }
    Ok(svg.finish())
}
