//! Classical single-class waterfall plots.

use serde::{Deserialize, Serialize};

use super::svg::{num, padded, Anchor, Frame, Svg};
use super::PlotSpec;
use crate::error::{Error, Result};
use crate::shap::ShapTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallBar {
    pub label: String,
    /// Contribution; for the aggregate bar, the sum of the aggregated values.
    pub value: f64,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalWaterfall {
    pub sample_id: usize,
    pub class_name: String,
    pub base: f64,
    /// Largest contribution first; each bar starts at the previous tip.
    pub bars: Vec<WaterfallBar>,
    /// Final tip: `base + Σ φ`, the model margin by additivity.
    pub tip: f64,
}

/// Bars of one sample's waterfall for `class` (optional when `k = 1`).
pub fn waterfall_bars(
    t: &ShapTensor,
    sample: usize,
    class: Option<usize>,
    top_n: usize,
) -> Result<ClassicalWaterfall> {
    if sample >= t.n_samples() {
        return Err(Error::OutOfRange {
            index: sample,
            len: t.n_samples(),
        });
    }
    let c = match class {
        Some(c) if c >= t.n_classes() => {
            return Err(Error::OutOfRange {
                index: c,
                len: t.n_classes(),
            })
        }
        Some(c) => c,
        None if t.n_classes() == 1 => 0,
        None => {
            return Err(Error::InvalidInput(format!(
                "a class must be chosen for a {}-class tensor",
                t.n_classes()
            )))
        }
    };
    let phi = t.sample(sample);
    let mut order: Vec<usize> = (0..t.n_features()).filter(|&j| phi[[j, c]] != 0.0).collect();
    order.sort_by(|&a, &b| phi[[b, c]].abs().total_cmp(&phi[[a, c]].abs()).then(a.cmp(&b)));

    let base = t.base()[c];
    let mut tip = base;
    let mut bars = Vec::new();
    let shown = order.len().min(top_n.max(1));
    for &j in &order[..shown] {
        let value = phi[[j, c]];
        bars.push(WaterfallBar {
            label: t.feature_names()[j].clone(),
            value,
            start: tip,
            end: tip + value,
        });
        tip += value;
    }
    if order.len() > shown {
        let rest = &order[shown..];
        let value: f64 = rest.iter().map(|&j| phi[[j, c]]).sum();
        bars.push(WaterfallBar {
            label: format!("{} other features", rest.len()),
            value,
            start: tip,
            end: tip + value,
        });
        tip += value;
    }
    Ok(ClassicalWaterfall {
        sample_id: t.sample_ids()[sample],
        class_name: t.class_names()[c].clone(),
        base,
        bars,
        tip,
    })
}

/// Horizontal waterfall: one row per bar, largest at the top, with the base
/// value and the prediction marked on the value axis.
pub fn classical_waterfall(
    t: &ShapTensor,
    sample: usize,
    class: Option<usize>,
    spec: &PlotSpec,
) -> Result<String> {
    spec.validate()?;
    let w = waterfall_bars(t, sample, class, spec.top_n)?;
    Ok(render(&w, spec))
}

fn render(w: &ClassicalWaterfall, spec: &PlotSpec) -> String {
    let mut svg = Svg::new(spec.width, spec.height);
    let (left, right, top, bottom) = (
        200.0,
        svg.width() - 40.0,
        60.0,
        svg.height() - 60.0,
    );
    let mut lo = w.base.min(w.tip);
    let mut hi = w.base.max(w.tip);
    for b in &w.bars {
        lo = lo.min(b.start.min(b.end));
        hi = hi.max(b.start.max(b.end));
    }
    let (x0, x1) = padded(lo, hi, 0.08);
    let rows = w.bars.len().max(1) as f64;
    let frame = Frame {
        x0,
        x1,
        y0: 0.0,
        y1: rows,
        left,
        right,
        top,
        bottom,
    };
    let title = if spec.title.is_empty() {
        format!("Sample {} — {}", w.sample_id, w.class_name)
    } else {
        spec.title.clone()
    };
    svg.text(svg.width() / 2.0, 30.0, 16.0, Anchor::Middle, &title);

    // Value axis.
    svg.line(left, bottom, right, bottom, "#333333", 1.0, "");
    for i in 0..=4 {
        let v = x0 + (x1 - x0) * f64::from(i) / 4.0;
        let px = frame.px(v);
        svg.line(px, bottom, px, bottom + 5.0, "#333333", 1.0, "");
        svg.text(px, bottom + 20.0, 11.0, Anchor::Middle, &num(v));
    }
    let x_label = if spec.x_label.is_empty() { "model margin" } else { &spec.x_label };
    svg.text((left + right) / 2.0, bottom + 45.0, 12.0, Anchor::Middle, x_label);

    let row_h = (bottom - top) / rows;
    for (i, b) in w.bars.iter().enumerate() {
        let y = top + row_h * i as f64;
        let (a, z) = (frame.px(b.start), frame.px(b.end));
        let color = if b.value >= 0.0 { "#ff0051" } else { "#008bfb" };
        svg.rect(a.min(z), y + row_h * 0.15, (z - a).abs().max(1.0), row_h * 0.7, color, "");
        svg.text(left - 8.0, y + row_h * 0.5 + 4.0, 12.0, Anchor::End, &b.label);
        let sign = if b.value >= 0.0 { "+" } else { "" };
        let (tx, anchor) = if b.value >= 0.0 {
            (z.max(a) + 4.0, Anchor::Start)
        } else {
            (z.min(a) - 4.0, Anchor::End)
        };
        svg.text(tx, y + row_h * 0.5 + 4.0, 11.0, anchor, &format!("{sign}{}", num(b.value)));
        if i + 1 < w.bars.len() {
            svg.line(z, y + row_h * 0.85, z, y + row_h * 1.15, "#888888", 1.0, r#" stroke-dasharray="2,2""#);
        }
    }

    let base_px = frame.px(w.base);
    svg.line(base_px, top - 10.0, base_px, bottom, "#777777", 1.0, r#" stroke-dasharray="4,3""#);
    svg.text(base_px, bottom + 33.0, 11.0, Anchor::Middle, &format!("E[f(X)] = {}", num(w.base)));
    let tip_px = frame.px(w.tip);
    svg.line(tip_px, top - 10.0, tip_px, bottom, "#333333", 1.0, "");
    svg.text(tip_px, top - 14.0, 12.0, Anchor::Middle, &format!("f(x) = {}", num(w.tip)));
    svg.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn tensor(phi: &[f64], base: f64) -> ShapTensor {
        let values = Array3::from_shape_vec((1, phi.len(), 1), phi.to_vec()).unwrap();
        ShapTensor::new(values, vec![base]).unwrap()
    }

    #[test]
    fn zero_phi_gives_no_bars() {
        let w = waterfall_bars(&tensor(&[0.0, 0.0, 0.0], 1.5), 0, None, 10).unwrap();
        assert!(w.bars.is_empty());
        assert_eq!(w.tip, 1.5);
    }

    #[test]
    fn two_bar_tips() {
        let w = waterfall_bars(&tensor(&[-1.0, 2.0], 0.0), 0, None, 10).unwrap();
        let ends: Vec<f64> = w.bars.iter().map(|b| b.end).collect();
        assert_eq!(ends, vec![2.0, 1.0]);
        assert_eq!(w.tip, 1.0);
    }

    #[test]
    fn other_bar_aggregates_the_tail() {
        let w = waterfall_bars(&tensor(&[0.1, -3.0, 0.2, 1.0], 0.5), 0, None, 2).unwrap();
        assert_eq!(w.bars.len(), 3);
        assert_eq!(w.bars[0].label, "x1");
        assert_eq!(w.bars[2].label, "2 other features");
        assert!((w.bars[2].value - 0.3).abs() < 1e-15);
        assert!((w.tip - (0.5 + 0.1 - 3.0 + 0.2 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn marks_negative_prediction() {
        let svg = classical_waterfall(&tensor(&[-4.0, -2.0, -0.75], 0.0), 0, None, &PlotSpec::default())
            .unwrap();
        assert!(svg.contains("f(x) = -6.75"));
    }

    #[test]
    fn multi_class_needs_a_class() {
        let t = ShapTensor::new(Array3::zeros((1, 2, 3)), vec![0.0; 3]).unwrap();
        assert!(waterfall_bars(&t, 0, None, 5).is_err());
        assert!(waterfall_bars(&t, 1, Some(0), 5).is_err());
        assert!(waterfall_bars(&t, 0, Some(2), 5).is_ok());
    }
}
