//! Density-based hierarchical clustering with excess-of-mass selection.
//!
//! Pipeline: core distances → mutual reachability → minimum spanning tree →
//! single-linkage hierarchy → condensed tree (clusters smaller than
//! `min_cluster_size` shed points instead of splitting) → the antichain of
//! condensed clusters maximizing total stability.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ClusterLabeling;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    /// Neighbour rank for core distances, counting the point itself.
    pub min_samples: usize,
}

impl Default for HdbscanParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 15,
            min_samples: 15,
        }
    }
}

impl HdbscanParams {
    fn validate(&self) -> Result<()> {
        if self.min_cluster_size < 2 || self.min_samples < 1 {
            return Err(Error::InvalidSpec(format!(
                "need min_cluster_size ≥ 2 and min_samples ≥ 1, got {} and {}",
                self.min_cluster_size, self.min_samples
            )));
        }
        Ok(())
    }
}

/// Pairwise Euclidean distances; rows computed in parallel, each entry by
/// the same sequential sum.
pub fn pairwise_distances(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    x.row(i)
                        .iter()
                        .zip(x.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect();
    Array2::from_shape_vec((n, n), rows.into_iter().flatten().collect()).expect("n × n")
}

/// Distance to the `min_samples`-th nearest point, the point itself being
/// the first. Ranks beyond `n` clamp to the farthest point.
pub fn core_distances(dist: &Array2<f64>, min_samples: usize) -> Vec<f64> {
    let n = dist.nrows();
    let rank = min_samples.clamp(1, n.max(1)) - 1;
    (0..n)
        .map(|i| {
            let mut row = dist.row(i).to_vec();
            row.select_nth_unstable_by(rank, f64::total_cmp);
            row[rank]
        })
        .collect()
}

pub fn mutual_reachability(dist: &Array2<f64>, core: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn(dist.dim(), |(i, j)| {
        if i == j {
            0.0
        } else {
            dist[[i, j]].max(core[i]).max(core[j])
        }
    })
}

/// Prim's algorithm on a dense symmetric weight matrix. Edges come out in
/// the order they join the tree, as `(inside, outside, weight)`.
pub fn minimum_spanning_tree(weights: &Array2<f64>) -> Vec<(usize, usize, f64)> {
    let n = weights.nrows();
    if n == 0 {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for j in 0..n {
            if !in_tree[j] && weights[[current, j]] < best[j] {
                best[j] = weights[[current, j]];
                from[j] = current;
            }
        }
        let mut next = usize::MAX;
        for j in 0..n {
            if !in_tree[j] && (next == usize::MAX || best[j] < best[next]) {
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((from[next], next, best[next]));
        current = next;
    }
    edges
}

/// One merge of the single-linkage hierarchy. Ids below `n` are points;
/// merge `i` creates node `n + i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

pub fn single_linkage(n: usize, mst: &[(usize, usize, f64)]) -> Vec<Merge> {
    let mut edges = mst.to_vec();
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut parent: Vec<usize> = (0..2 * n).collect();
    let mut size = vec![1usize; 2 * n];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for (a, b, w) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        let node = n + merges.len();
        parent[ra] = node;
        parent[rb] = node;
        size[node] = size[ra] + size[rb];
        merges.push(Merge {
            left: ra,
            right: rb,
            distance: w,
            size: size[node],
        });
    }
    merges
}

/// Condensed-tree edge: a point or a child cluster leaving `parent` at
/// density level `lambda = 1 / distance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondensedEdge {
    pub parent: usize,
    pub child: CondensedChild,
    pub lambda: f64,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CondensedChild {
    Point(usize),
    Cluster(usize),
}

/// Full clustering output, including the condensed tree it was selected from.
#[derive(Debug, Clone, PartialEq)]
pub struct HdbscanTree {
    pub labeling: ClusterLabeling,
    /// Condensed clusters; cluster 0 is the root and children have larger ids
    /// than their parents.
    pub condensed: Vec<CondensedEdge>,
    pub birth_lambda: Vec<f64>,
    /// Excess of mass of each condensed cluster (own, not propagated).
    pub stability: Vec<f64>,
    pub selected: Vec<bool>,
    /// Condensed-cluster id of each final label.
    pub label_cluster: Vec<usize>,
}

fn lambda_of(distance: f64) -> f64 {
    if distance > 0.0 {
        1.0 / distance
    } else {
        f64::INFINITY
    }
}

fn leaves_under(node: usize, n: usize, merges: &[Merge], out: &mut Vec<usize>) {
    let mut stack = vec![node];
    while let Some(v) = stack.pop() {
        if v < n {
            out.push(v);
        } else {
            let m = merges[v - n];
            stack.push(m.right);
            stack.push(m.left);
        }
    }
}

fn node_size(node: usize, n: usize, merges: &[Merge]) -> usize {
    if node < n {
        1
    } else {
        merges[node - n].size
    }
}

/// Clusters the rows of `x`; see [`hdbscan_tree`] for the full hierarchy.
pub fn hdbscan(x: ArrayView2<f64>, params: &HdbscanParams) -> Result<ClusterLabeling> {
    Ok(hdbscan_tree(x, params)?.labeling)
}

pub fn hdbscan_tree(x: ArrayView2<f64>, params: &HdbscanParams) -> Result<HdbscanTree> {
    params.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("cannot cluster zero rows".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("clustering input contains non-finite values".into()));
    }
    let mcs = params.min_cluster_size;
    if n < mcs {
        return Ok(HdbscanTree {
            labeling: ClusterLabeling::from_labels(vec![-1; n]),
            condensed: Vec::new(),
            birth_lambda: Vec::new(),
            stability: Vec::new(),
            selected: Vec::new(),
            label_cluster: Vec::new(),
        });
    }

    let dist = pairwise_distances(x);
    let core = core_distances(&dist, params.min_samples);
    let mst = minimum_spanning_tree(&mutual_reachability(&dist, &core));
    let merges = single_linkage(n, &mst);

    // Condense.
    let mut condensed = Vec::new();
    let mut birth = vec![0.0];
    let mut parent_of = vec![usize::MAX];
    let mut point_cluster = vec![0usize; n];
    let mut fall_out = |cluster: usize, node: usize, lambda: f64, condensed: &mut Vec<CondensedEdge>| {
        let mut pts = Vec::new();
        leaves_under(node, n, &merges, &mut pts);
        for p in pts {
            point_cluster[p] = cluster;
            condensed.push(CondensedEdge {
                parent: cluster,
                child: CondensedChild::Point(p),
                lambda,
                size: 1,
            });
        }
    };
    // n ≥ min_cluster_size ≥ 2, so the root is a merge.
    let mut stack = vec![(2 * n - 2, 0usize)];
    while let Some((node, cluster)) = stack.pop() {
        let distance = merges[node - n].distance;
        let lambda = lambda_of(distance);
        if distance == 0.0 {
            // Coincident points cannot be separated by density.
            fall_out(cluster, node, lambda, &mut condensed);
            continue;
        }
        // Merges tied at this distance happen at once: the components below
        // it are the children, whatever order the ties were merged in.
        let mut parts = Vec::new();
        let mut open = vec![node];
        while let Some(v) = open.pop() {
            if v >= n && merges[v - n].distance == distance {
                open.push(merges[v - n].right);
                open.push(merges[v - n].left);
            } else {
                parts.push(v);
            }
        }
        let big: Vec<usize> = parts
            .iter()
            .copied()
            .filter(|&v| node_size(v, n, &merges) >= mcs)
            .collect();
        for &v in &parts {
            if node_size(v, n, &merges) < mcs {
                fall_out(cluster, v, lambda, &mut condensed);
            }
        }
        match big.len() {
            0 => {}
            1 => stack.push((big[0], cluster)),
            _ => {
                for &child in big.iter().rev() {
                    let id = birth.len();
                    birth.push(lambda);
                    parent_of.push(cluster);
                    condensed.push(CondensedEdge {
                        parent: cluster,
                        child: CondensedChild::Cluster(id),
                        lambda,
                        size: node_size(child, n, &merges),
                    });
                    stack.push((child, id));
                }
            }
        }
    }

    // Stability: Σ (λ_leave − λ_birth) · size over everything leaving a cluster.
    let n_clusters = birth.len();
    let mut stability = vec![0.0; n_clusters];
    for e in &condensed {
        let b = birth[e.parent];
        if e.lambda != b {
            stability[e.parent] += (e.lambda - b) * e.size as f64;
        }
    }

    // Excess-of-mass selection, children before parents.
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for c in 1..n_clusters {
        children[parent_of[c]].push(c);
    }
    let mut selected = vec![false; n_clusters];
    let mut best = stability.clone();
    for c in (0..n_clusters).rev() {
        if children[c].is_empty() {
            selected[c] = true;
            continue;
        }
        if c == 0 {
            break;
        }
        let below: f64 = children[c].iter().map(|&k| best[k]).sum();
        if stability[c] >= below {
            selected[c] = true;
            let mut stack = children[c].clone();
            while let Some(k) = stack.pop() {
                selected[k] = false;
                stack.extend(&children[k]);
            }
        } else {
            best[c] = below;
        }
    }

    // Selected ancestor of each cluster (itself included).
    let mut owner = vec![usize::MAX; n_clusters];
    for c in 0..n_clusters {
        owner[c] = if selected[c] {
            c
        } else if c == 0 {
            usize::MAX
        } else {
            owner[parent_of[c]]
        };
    }
    // Final labels numbered by smallest member index.
    let mut label_of_cluster = vec![-1i64; n_clusters];
    let mut label_cluster = Vec::new();
    let mut labels = vec![-1i64; n];
    for p in 0..n {
        let o = owner[point_cluster[p]];
        if o == usize::MAX {
            continue;
        }
        if label_of_cluster[o] < 0 {
            label_of_cluster[o] = label_cluster.len() as i64;
            label_cluster.push(o);
        }
        labels[p] = label_of_cluster[o];
    }
    let labeling = ClusterLabeling {
        n_clusters: label_cluster.len(),
        stability: label_cluster.iter().map(|&c| stability[c]).collect(),
        labels,
    };
    Ok(HdbscanTree {
        labeling,
        condensed,
        birth_lambda: birth,
        stability,
        selected,
        label_cluster,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn too_few_points_are_noise() {
        let x = Array2::from_shape_fn((9, 2), |(i, j)| (i * 2 + j) as f64);
        let params = HdbscanParams {
            min_cluster_size: 10,
            min_samples: 3,
        };
        let l = hdbscan(x.view(), &params).unwrap();
        assert!(l.labels.iter().all(|&v| v == -1));
        assert_eq!(l.n_clusters, 0);
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let x = Array2::from_elem((20, 3), 1.5);
        let params = HdbscanParams {
            min_cluster_size: 5,
            min_samples: 5,
        };
        let l = hdbscan(x.view(), &params).unwrap();
        assert_eq!(l.n_clusters, 1);
        assert!(l.labels.iter().all(|&v| v == 0));
    }

    #[test]
    fn core_distance_counts_self() {
        let d = pairwise_distances(array![[0.0], [1.0], [3.0]].view());
        assert_eq!(core_distances(&d, 1), vec![0.0, 0.0, 0.0]);
        assert_eq!(core_distances(&d, 2), vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn two_separated_lines() {
        // Two evenly spaced runs of 12 points far apart.
        let x = Array2::from_shape_fn((24, 1), |(i, _)| {
            if i < 12 {
                i as f64
            } else {
                1000.0 + i as f64
            }
        });
        let params = HdbscanParams {
            min_cluster_size: 5,
            min_samples: 2,
        };
        let l = hdbscan(x.view(), &params).unwrap();
        assert_eq!(l.n_clusters, 2);
        assert!(l.labels[..12].iter().all(|&v| v == 0));
        assert!(l.labels[12..].iter().all(|&v| v == 1));
    }

    #[test]
    fn single_linkage_sizes() {
        let mst = vec![(0, 1, 1.0), (1, 2, 0.5)];
        let m = single_linkage(3, &mst);
        assert_eq!(m[0], Merge { left: 1, right: 2, distance: 0.5, size: 2 });
        assert_eq!(m[1], Merge { left: 0, right: 3, distance: 1.0, size: 3 });
    }
}
