//! Brute-force Shapley values, written without reference to the library's
//! SHAP code.

use shapvec::models::{MarginModel, Node, Tree};

/// Expected tree output when only the features in `present` are known:
/// known splits follow `x`, unknown splits average both children by cover.
pub fn path_dependent_expectation(tree: &Tree, x: &[f64], present: &[bool], node: usize) -> Vec<f64> {
    match &tree.nodes()[node] {
        Node::Leaf { value, .. } => value.clone(),
        Node::Split {
            feature,
            threshold,
            left,
            right,
            cover,
        } => {
            if present[*feature] {
                let next = if x[*feature] < *threshold { *left } else { *right };
                path_dependent_expectation(tree, x, present, next)
            } else {
                let l = path_dependent_expectation(tree, x, present, *left);
                let r = path_dependent_expectation(tree, x, present, *right);
                let wl = tree.nodes()[*left].cover() / cover;
                let wr = tree.nodes()[*right].cover() / cover;
                l.iter().zip(&r).map(|(a, b)| wl * a + wr * b).collect()
            }
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// `φ[j][o]` by the subset-weight formula over all `2^p` coalitions.
pub fn subset_shapley(value: impl Fn(&[bool]) -> Vec<f64>, p: usize) -> Vec<Vec<f64>> {
    let n_out = value(&vec![false; p]).len();
    let mut phi = vec![vec![0.0; n_out]; p];
    let cache: Vec<Vec<f64>> = (0..1usize << p)
        .map(|mask| {
            let present: Vec<bool> = (0..p).map(|j| mask >> j & 1 == 1).collect();
            value(&present)
        })
        .collect();
    for j in 0..p {
        for mask in 0..1usize << p {
            if mask >> j & 1 == 1 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = factorial(s) * factorial(p - s - 1) / factorial(p);
            let with = mask | 1 << j;
            for o in 0..n_out {
                phi[j][o] += w * (cache[with][o] - cache[mask][o]);
            }
        }
    }
    phi
}

/// Path-dependent Shapley values of one tree at `x`.
pub fn tree_oracle(tree: &Tree, x: &[f64]) -> Vec<Vec<f64>> {
    subset_shapley(
        |present| path_dependent_expectation(tree, x, present, 0),
        tree.n_features(),
    )
}

fn for_each_permutation(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        for_each_permutation(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Interventional Shapley values of `model` at `x` against `background`,
/// averaging marginal contributions over all `p!` feature orderings.
pub fn interventional_oracle(model: &dyn MarginModel, x: &[f64], background: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = x.len();
    let k = model.n_classes();
    let value = |present: &[bool]| -> Vec<f64> {
        let mut acc = vec![0.0; k];
        for b in background {
            let hybrid: Vec<f64> = (0..p).map(|j| if present[j] { x[j] } else { b[j] }).collect();
            for (a, m) in acc.iter_mut().zip(model.margin(&hybrid)) {
                *a += m;
            }
        }
        acc.iter().map(|a| a / background.len() as f64).collect()
    };
    let mut phi = vec![vec![0.0; k]; p];
    let mut count = 0.0;
    let mut order: Vec<usize> = (0..p).collect();
    for_each_permutation(&mut order, 0, &mut |perm| {
        let mut present = vec![false; p];
        let mut before = value(&present);
        for &j in perm {
            present[j] = true;
            let after = value(&present);
            for c in 0..k {
                phi[j][c] += after[c] - before[c];
            }
            before = after;
        }
        count += 1.0;
    });
    for row in &mut phi {
        for v in row.iter_mut() {
            *v /= count;
        }
    }
    phi
}
