//! Exact path-dependent TreeSHAP.
//!
//! The recursion carries, for every feature split on along the current
//! root-to-node path, the fraction of "feature absent" flow (`zero`, the
//! cover ratio) and of "feature present" flow (`one`, 1 if `x` follows the
//! branch, else 0), together with permutation weights for every possible
//! number of present features. At a leaf each path feature receives
//! `w · (one − zero) · value`, where `w` is the path weight with that
//! feature unwound. Cost is `O(L · D²)` per tree and sample.

use ndarray::{Array2, Array3, ArrayView2};
use rayon::prelude::*;

use super::{Provenance, ShapTensor};
use crate::error::{Error, Result};
use crate::models::{BoostedEnsemble, DecisionTree, Node, Tree, TrainedModel};

#[derive(Debug, Clone, Copy)]
struct PathElement {
    /// `None` for the sentinel element that starts every path.
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElement>, zero: f64, one: f64, feature: Option<usize>) {
    let l = path.len();
    path.push(PathElement {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    let denom = (l + 1) as f64;
    for i in (0..l).rev() {
        let w = path[i].weight;
        path[i + 1].weight += one * w * (i + 1) as f64 / denom;
        path[i].weight = zero * w * (l - i) as f64 / denom;
    }
}

fn unwind(path: &mut Vec<PathElement>, index: usize) {
    let l = path.len() - 1;
    let PathElement { zero, one, .. } = path[index];
    let denom = (l + 1) as f64;
    let mut next = path[l].weight;
    for j in (0..l).rev() {
        if one != 0.0 {
            let tmp = path[j].weight;
            path[j].weight = next * denom / ((j + 1) as f64 * one);
            next = tmp - path[j].weight * zero * (l - j) as f64 / denom;
        } else {
            path[j].weight = path[j].weight * denom / (zero * (l - j) as f64);
        }
    }
    for j in index..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

/// Total weight of the path with element `index` unwound, without mutating.
fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let l = path.len() - 1;
    let PathElement { zero, one, .. } = path[index];
    let denom = (l + 1) as f64;
    let mut next = path[l].weight;
    let mut total = 0.0;
    for j in (0..l).rev() {
        if one != 0.0 {
            let tmp = next * denom / ((j + 1) as f64 * one);
            total += tmp;
            next = path[j].weight - tmp * zero * (l - j) as f64 / denom;
        } else {
            total += path[j].weight * denom / (zero * (l - j) as f64);
        }
    }
    total
}

struct Walk<'a> {
    tree: &'a Tree,
    x: &'a [f64],
    /// `p × n_outputs`, row-major.
    phi: &'a mut [f64],
    n_outputs: usize,
}

impl Walk<'_> {
    fn recurse(
        &mut self,
        node: usize,
        mut path: Vec<PathElement>,
        zero: f64,
        one: f64,
        feature: Option<usize>,
    ) {
        extend(&mut path, zero, one, feature);
        match &self.tree.nodes()[node] {
            Node::Leaf { value, .. } => {
                for i in 1..path.len() {
                    let w = unwound_sum(&path, i);
                    let scale = w * (path[i].one - path[i].zero);
                    let f = path[i].feature.expect("non-sentinel");
                    let row = &mut self.phi[f * self.n_outputs..(f + 1) * self.n_outputs];
                    for (r, v) in row.iter_mut().zip(value) {
                        *r += scale * v;
                    }
                }
            }
            &Node::Split {
                feature: f,
                threshold,
                left,
                right,
                cover,
            } => {
                let (hot, cold) = if self.x[f] < threshold {
                    (left, right)
                } else {
                    (right, left)
                };
                let nodes = self.tree.nodes();
                let (hot_cover, cold_cover) = (nodes[hot].cover(), nodes[cold].cover());
                let (mut incoming_zero, mut incoming_one) = (1.0, 1.0);
                // A feature split on twice along a path keeps a single element.
                if let Some(k) = path.iter().skip(1).position(|e| e.feature == Some(f)) {
                    let k = k + 1;
                    incoming_zero = path[k].zero;
                    incoming_one = path[k].one;
                    unwind(&mut path, k);
                }
                self.recurse(
                    hot,
                    path.clone(),
                    incoming_zero * hot_cover / cover,
                    incoming_one,
                    Some(f),
                );
                self.recurse(cold, path, incoming_zero * cold_cover / cover, 0.0, Some(f));
            }
        }
    }
}

fn check_covers(tree: &Tree) -> Result<()> {
    if let Some(i) = tree.nodes().iter().position(|n| !(n.cover() > 0.0)) {
        return Err(Error::InvalidModel(format!(
            "node {i} has zero cover; path-dependent SHAP is undefined"
        )));
    }
    Ok(())
}

/// SHAP values of one tree at one point, `p × n_outputs`.
pub fn tree_shap_values(tree: &Tree, x: &[f64]) -> Result<Array2<f64>> {
    check_covers(tree)?;
    if x.len() != tree.n_features() {
        return Err(Error::shape(tree.n_features(), x.len()));
    }
    let mut phi = vec![0.0; tree.n_features() * tree.n_outputs()];
    accumulate(tree, x, &mut phi);
    Ok(Array2::from_shape_vec((tree.n_features(), tree.n_outputs()), phi).expect("sized"))
}

fn accumulate(tree: &Tree, x: &[f64], phi: &mut [f64]) {
    let depth = tree.depth() + 2;
    let mut walk = Walk {
        tree,
        x,
        phi,
        n_outputs: tree.n_outputs(),
    };
    walk.recurse(0, Vec::with_capacity(depth), 1.0, 1.0, None);
}

/// Which model outputs a tree's leaves feed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeTarget {
    /// Leaf value `c` feeds class `c`.
    AllClasses,
    /// The single leaf value feeds this class.
    Class(usize),
}

/// A model whose margin is `offset + Σ scale · tree(x)`.
pub trait TreeExplain {
    fn n_features(&self) -> usize;
    fn n_classes(&self) -> usize;
    /// Constant added to every margin.
    fn offset(&self) -> Vec<f64>;
    fn scaled_trees(&self) -> Vec<(&Tree, TreeTarget, f64)>;
}

impl TreeExplain for DecisionTree {
    fn n_features(&self) -> usize {
        self.tree.n_features()
    }

    fn n_classes(&self) -> usize {
        self.tree.n_outputs()
    }

    fn offset(&self) -> Vec<f64> {
        vec![0.0; self.tree.n_outputs()]
    }

    fn scaled_trees(&self) -> Vec<(&Tree, TreeTarget, f64)> {
        vec![(&self.tree, TreeTarget::AllClasses, 1.0)]
    }
}

impl TreeExplain for BoostedEnsemble {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_classes(&self) -> usize {
        self.base_score.len()
    }

    fn offset(&self) -> Vec<f64> {
        self.base_score.clone()
    }

    fn scaled_trees(&self) -> Vec<(&Tree, TreeTarget, f64)> {
        let eta = self.params.learning_rate;
        self.rounds
            .iter()
            .flat_map(|round| {
                round
                    .iter()
                    .enumerate()
                    .map(move |(c, t)| (t, TreeTarget::Class(c), eta))
            })
            .collect()
    }
}

impl TreeExplain for TrainedModel {
    fn n_features(&self) -> usize {
        crate::models::MarginModel::n_features(self)
    }

    fn n_classes(&self) -> usize {
        crate::models::MarginModel::n_classes(self)
    }

    fn offset(&self) -> Vec<f64> {
        match self {
            TrainedModel::Tree(m) => m.offset(),
            TrainedModel::Boosted(m) => m.offset(),
            TrainedModel::Mlp(_) => Vec::new(),
        }
    }

    fn scaled_trees(&self) -> Vec<(&Tree, TreeTarget, f64)> {
        match self {
            TrainedModel::Tree(m) => m.scaled_trees(),
            TrainedModel::Boosted(m) => m.scaled_trees(),
            TrainedModel::Mlp(_) => Vec::new(),
        }
    }
}

/// Exact path-dependent SHAP values for every row of `x`.
///
/// The base value of class `c` is the model offset plus the cover-weighted
/// expected output of every tree feeding `c`, so each row's values sum to
/// its margin minus the base.
pub fn tree_shap(model: &(impl TreeExplain + ?Sized), x: ArrayView2<f64>) -> Result<ShapTensor> {
    let (p, k) = (model.n_features(), model.n_classes());
    let trees = model.scaled_trees();
    if model.offset().len() != k {
        return Err(Error::InvalidModel("model is not a tree model".into()));
    }
    if x.ncols() != p {
        return Err(Error::shape(format!("{p} features"), x.ncols()));
    }
    for (tree, target, _) in &trees {
        check_covers(tree)?;
        let outputs_ok = match target {
            TreeTarget::AllClasses => tree.n_outputs() == k,
            TreeTarget::Class(c) => tree.n_outputs() == 1 && *c < k,
        };
        if !outputs_ok || tree.n_features() != p {
            return Err(Error::InvalidModel("tree shape disagrees with the model".into()));
        }
    }

    let mut base = model.offset();
    for (tree, target, scale) in &trees {
        let expected = tree.expected_value();
        match *target {
            TreeTarget::AllClasses => {
                for (b, e) in base.iter_mut().zip(&expected) {
                    *b += scale * e;
                }
            }
            TreeTarget::Class(c) => base[c] += scale * expected[0],
        }
    }

    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let per_sample: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|row| {
            let mut phi = vec![0.0; p * k];
            let mut scratch = Vec::new();
            for (tree, target, scale) in &trees {
                match *target {
                    TreeTarget::AllClasses => {
                        scratch.clear();
                        scratch.resize(p * k, 0.0);
                        accumulate(tree, row, &mut scratch);
                        for (dst, v) in phi.iter_mut().zip(&scratch) {
                            *dst += scale * v;
                        }
                    }
                    TreeTarget::Class(c) => {
                        scratch.clear();
                        scratch.resize(p, 0.0);
                        accumulate(tree, row, &mut scratch);
                        for (j, v) in scratch.iter().enumerate() {
                            phi[j * k + c] += scale * v;
                        }
                    }
                }
            }
            phi
        })
        .collect();

    let flat: Vec<f64> = per_sample.into_iter().flatten().collect();
    let values = Array3::from_shape_vec((x.nrows(), p, k), flat).expect("sized");
    Ok(ShapTensor::new(values, base)?.with_provenance(Provenance {
        model: String::new(),
        method: "tree".into(),
        background: None,
    }))
}
