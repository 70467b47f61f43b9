//! Binary trees with per-node covers, and the greedy builder shared by the
//! CART classifier and the boosted ensemble.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

use super::MarginModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Samples with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        cover: f64,
    },
    Leaf {
        value: Vec<f64>,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }
}

/// Array-backed binary tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
    n_features: usize,
    n_outputs: usize,
}

impl Tree {
    /// Builds a tree from raw nodes, checking that it is a well-formed binary
    /// tree whose child covers sum to the parent cover.
    pub fn from_nodes(nodes: Vec<Node>, n_features: usize, n_outputs: usize) -> Result<Self> {
        let tree = Self {
            nodes,
            n_features,
            n_outputs,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidModel(msg));
        if self.nodes.is_empty() {
            return invalid("tree has no nodes".into());
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if !(node.cover() > 0.0) {
                return invalid(format!("node {i} has zero cover"));
            }
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    cover,
                } => {
                    if *feature >= self.n_features {
                        return invalid(format!("node {i} splits on feature {feature}"));
                    }
                    if !threshold.is_finite() {
                        return invalid(format!("node {i} has a non-finite threshold"));
                    }
                    for &c in [left, right] {
                        if c >= self.nodes.len() || c <= i {
                            return invalid(format!("node {i} has bad child {c}"));
                        }
                        parents[c] += 1;
                    }
                    let children = self.nodes[*left].cover() + self.nodes[*right].cover();
                    if (children - cover).abs() > 1e-9 * cover.max(1.0) {
                        return invalid(format!(
                            "node {i}: child covers {children} do not sum to {cover}"
                        ));
                    }
                }
                Node::Leaf { value, .. } => {
                    if value.len() != self.n_outputs {
                        return invalid(format!("leaf {i} has {} outputs", value.len()));
                    }
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return invalid("nodes do not form a single tree".into());
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    /// Index of the leaf `x` routes to.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] < *threshold { *left } else { *right },
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> &[f64] {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Cover-weighted mean of the leaf values.
    pub fn expected_value(&self) -> Vec<f64> {
        let root = self.nodes[0].cover();
        let mut out = vec![0.0; self.n_outputs];
        for node in &self.nodes {
            if let Node::Leaf { value, cover } = node {
                for (o, v) in out.iter_mut().zip(value) {
                    *o += v * cover / root;
                }
            }
        }
        out
    }
}

/// Split scoring used by [`build_tree`].
pub(crate) trait Criterion {
    /// Sufficient statistics of a set of samples.
    type Stats: Clone;

    fn empty(&self) -> Self::Stats;
    fn add(&self, stats: &mut Self::Stats, sample: usize);
    fn difference(&self, whole: &Self::Stats, part: &Self::Stats) -> Self::Stats;
    fn count(&self, stats: &Self::Stats) -> usize;
    /// Whether a node with these statistics may have children of this size.
    fn admissible(&self, child: &Self::Stats) -> bool;
    /// Improvement from splitting `parent` into `left`/`right`.
    fn gain(&self, parent: &Self::Stats, left: &Self::Stats, right: &Self::Stats) -> f64;
    fn is_pure(&self, stats: &Self::Stats) -> bool;
    fn leaf_value(&self, stats: &Self::Stats) -> Vec<f64>;
}

pub(crate) struct BuildLimits {
    pub max_depth: usize,
    pub min_samples_split: usize,
}

struct Builder<'a, C: Criterion> {
    /// Column-major copy of `x`; the split scan reads one feature at a time.
    columns: &'a [Vec<f64>],
    criterion: &'a C,
    limits: &'a BuildLimits,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<'a, C: Criterion> Builder<'a, C> {
    fn find_split(&self, sorted: &[Vec<usize>], parent: &C::Stats) -> Option<BestSplit> {
        let mut best: Option<BestSplit> = None;
        for (feature, order) in sorted.iter().enumerate() {
            let column = &self.columns[feature];
            let mut left = self.criterion.empty();
            for t in 0..order.len() - 1 {
                self.criterion.add(&mut left, order[t]);
                let lo = column[order[t]];
                let hi = column[order[t + 1]];
                if !(lo < hi) {
                    continue;
                }
                let right = self.criterion.difference(parent, &left);
                if !self.criterion.admissible(&left) || !self.criterion.admissible(&right) {
                    continue;
                }
                let gain = self.criterion.gain(parent, &left, &right);
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold <= lo {
                        threshold = hi;
                    }
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, sorted: Vec<Vec<usize>>, depth: usize) -> usize {
        let mut stats = self.criterion.empty();
        for &i in &sorted[0] {
            self.criterion.add(&mut stats, i);
        }
        let n = sorted[0].len();
        let id = self.nodes.len();
        let cover = n as f64;
        self.nodes.push(Node::Leaf {
            value: self.criterion.leaf_value(&stats),
            cover,
        });
        if depth >= self.limits.max_depth
            || n < self.limits.min_samples_split
            || self.criterion.is_pure(&stats)
        {
            return id;
        }
        let Some(split) = self.find_split(&sorted, &stats) else {
            return id;
        };
        let column = &self.columns[split.feature];
        let goes_left = |i: usize| column[i] < split.threshold;
        let (mut left_sorted, mut right_sorted) = (Vec::new(), Vec::new());
        for order in &sorted {
            let (l, r): (Vec<usize>, Vec<usize>) = order.iter().partition(|&&i| goes_left(i));
            left_sorted.push(l);
            right_sorted.push(r);
        }
        drop(sorted);
        let left = self.grow(left_sorted, depth + 1);
        let right = self.grow(right_sorted, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            cover,
        };
        id
    }
}

/// Rows of `x` sorted by each feature (ties by row index), and the columns
/// themselves. Reusable across trees grown on the same rows.
pub(crate) struct Presorted {
    sorted: Vec<Vec<usize>>,
    columns: Vec<Vec<f64>>,
}

impl Presorted {
    pub(crate) fn new(x: &Array2<f64>, samples: &[usize]) -> Self {
        let columns: Vec<Vec<f64>> = x.columns().into_iter().map(|c| c.to_vec()).collect();
        let sorted = columns
            .iter()
            .map(|col| {
                let mut order = samples.to_vec();
                order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
                order
            })
            .collect();
        Self { sorted, columns }
    }
}

/// Greedy depth-first tree growth over the rows `samples` of `x`.
///
/// Ties in gain go to the lowest feature index, then the lowest threshold.
pub(crate) fn build_tree<C: Criterion>(
    x: &Array2<f64>,
    samples: &[usize],
    criterion: &C,
    limits: &BuildLimits,
    n_outputs: usize,
) -> Tree {
    build_tree_presorted(x, &Presorted::new(x, samples), criterion, limits, n_outputs)
}

pub(crate) fn build_tree_presorted<C: Criterion>(
    x: &Array2<f64>,
    presorted: &Presorted,
    criterion: &C,
    limits: &BuildLimits,
    n_outputs: usize,
) -> Tree {
    let mut builder = Builder {
        columns: &presorted.columns,
        criterion,
        limits,
        nodes: Vec::new(),
    };
    builder.grow(presorted.sorted.clone(), 0);
    Tree {
        nodes: builder.nodes,
        n_features: x.ncols(),
        n_outputs,
    }
}

/// Gini-impurity criterion over class counts.
struct Gini<'a> {
    labels: &'a [usize],
    n_classes: usize,
    min_leaf: usize,
}

impl Gini<'_> {
    fn impurity(counts: &[f64]) -> f64 {
        let n: f64 = counts.iter().sum();
        if n == 0.0 {
            return 0.0;
        }
        1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()
    }
}

impl Criterion for Gini<'_> {
    type Stats = Vec<f64>;

    fn empty(&self) -> Vec<f64> {
        vec![0.0; self.n_classes]
    }

    fn add(&self, stats: &mut Vec<f64>, sample: usize) {
        stats[self.labels[sample]] += 1.0;
    }

    fn difference(&self, whole: &Vec<f64>, part: &Vec<f64>) -> Vec<f64> {
        whole.iter().zip(part).map(|(a, b)| a - b).collect()
    }

    fn count(&self, stats: &Vec<f64>) -> usize {
        stats.iter().sum::<f64>() as usize
    }

    fn admissible(&self, child: &Vec<f64>) -> bool {
        self.count(child) >= self.min_leaf
    }

    fn gain(&self, parent: &Vec<f64>, left: &Vec<f64>, right: &Vec<f64>) -> f64 {
        let n: f64 = parent.iter().sum();
        let nl: f64 = left.iter().sum();
        let nr: f64 = right.iter().sum();
        Self::impurity(parent) - (nl / n) * Self::impurity(left) - (nr / n) * Self::impurity(right)
    }

    fn is_pure(&self, stats: &Vec<f64>) -> bool {
        stats.iter().filter(|&&c| c > 0.0).count() <= 1
    }

    fn leaf_value(&self, stats: &Vec<f64>) -> Vec<f64> {
        let n: f64 = stats.iter().sum();
        stats.iter().map(|c| c / n).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 5,
            min_leaf: 5,
        }
    }
}

/// CART classifier. Leaves hold class-frequency vectors, which are also the
/// model's margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub params: TreeParams,
    pub tree: Tree,
}

impl DecisionTree {
    pub fn leaf_id(&self, x: &[f64]) -> usize {
        self.tree.leaf_index(x)
    }
}

impl MarginModel for DecisionTree {
    fn n_features(&self) -> usize {
        self.tree.n_features
    }

    fn n_classes(&self) -> usize {
        self.tree.n_outputs
    }

    fn margin_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.tree.predict(x));
    }
}

/// Trains a Gini-impurity classification tree.
pub fn train_tree(train: &Dataset, params: &TreeParams) -> Result<DecisionTree> {
    if params.min_leaf == 0 {
        return Err(Error::InvalidSpec("min_leaf must be at least 1".into()));
    }
    let criterion = Gini {
        labels: train.labels(),
        n_classes: train.n_classes(),
        min_leaf: params.min_leaf,
    };
    let samples: Vec<usize> = (0..train.n_samples()).collect();
    let limits = BuildLimits {
        max_depth: params.max_depth,
        min_samples_split: 2 * params.min_leaf,
    };
    let tree = build_tree(train.features(), &samples, &criterion, &limits, train.n_classes());
    Ok(DecisionTree {
        params: *params,
        tree,
    })
}
