//! Property suites shared by the `properties` test target and the
//! acceptance runner. Each returns `Err` with the shrunk counterexample.

use ndarray::{Array2, Array3, Axis};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use shapvec::data::Dataset;
use shapvec::models::{train_boosted, BoostParams, Mlp};
use shapvec::shap::{tree_shap_values, ShapTensor};
use shapvec::subgroup::{
    hdbscan, hdbscan_tree, minimum_spanning_tree, mutual_reachability, core_distances,
    pairwise_distances, pca_fit, pca_transform, CondensedChild, HdbscanParams,
};
use shapvec::viz::{build_paths, top_features, Grouping};

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, scale: f64) -> impl Strategy<Value = Array2<f64>> {
    (rows, cols).prop_flat_map(move |(n, d)| {
        proptest::collection::vec(-scale..scale, n * d)
            .prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
    })
}

fn report<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

/// Eigenvalues sum to the trace, loadings are orthonormal, scores are
/// translation invariant and distances contract.
pub fn pca_properties() -> Result<(), String> {
    report(runner(96).run(&(matrix(3..30, 1..9, 10.0), -50.0..50.0f64), |(x, shift)| {
        let (n, d) = x.dim();
        let r = (n - 1).min(d);
        let m = pca_fit(x.view(), r).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let total: f64 = m.eigenvalues.iter().sum();
        prop_assert!((total - m.total_variance).abs() <= 1e-10 * m.total_variance.max(1.0));
        prop_assert!(m.eigenvalues.iter().all(|&e| e >= -1e-10));
        prop_assert!(m.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        let gram = m.loadings.t().dot(&m.loadings);
        for a in 0..r {
            for b in 0..r {
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!((gram[[a, b]] - want).abs() < 1e-10, "gram[{a},{b}] = {}", gram[[a, b]]);
            }
        }
        let z = pca_transform(&m, x.view()).unwrap();
        for i in 0..n {
            for j in 0..i {
                let dx = (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum().sqrt();
                let dz = (&z.row(i) - &z.row(j)).mapv(|v| v * v).sum().sqrt();
                prop_assert!(dz <= dx + 1e-10 * dx.max(1.0));
            }
        }
        // Translation: compare the leading direction when it is well separated.
        let moved = x.mapv(|v| v + shift);
        let m2 = pca_fit(moved.view(), 1).unwrap();
        let gap = if m.eigenvalues.len() > 1 { m.eigenvalues[0] - m.eigenvalues[1] } else { m.eigenvalues[0] };
        if gap > 1e-3 * m.eigenvalues[0].max(1e-12) && m.eigenvalues[0] > 1e-9 {
            let z1 = pca_transform(&m2, moved.view()).unwrap();
            for i in 0..n {
                prop_assert!((z1[[i, 0]] - z[[i, 0]]).abs() < 1e-6 * (1.0 + z[[i, 0]].abs()));
            }
        }
        Ok(())
    }))
}

/// Points around a few random centres, so clusters actually form.
fn blobs() -> impl Strategy<Value = Array2<f64>> {
    (2usize..4, 10usize..40, 1usize..4).prop_flat_map(|(centres, per, d)| {
        let n = centres * per;
        (
            proptest::collection::vec(-30.0..30.0f64, centres * d),
            proptest::collection::vec(-1.0..1.0f64, n * d),
        )
            .prop_map(move |(c, noise)| {
                Array2::from_shape_fn((n, d), |(i, j)| c[(i % centres) * d + j] + noise[i * d + j])
            })
    })
}

fn canonical_in_original_order(labels: &[i64], perm: &[usize]) -> Vec<i64> {
    // perm[i] = original index of permuted row i.
    let mut original = vec![0i64; labels.len()];
    for (i, &o) in perm.iter().enumerate() {
        original[o] = labels[i];
    }
    shapvec::subgroup::ClusterLabeling::from_labels(original).canonical().labels
}

/// Row permutation only renames clusters.
pub fn hdbscan_permutation_invariance() -> Result<(), String> {
    let strategy = blobs().prop_flat_map(|x| {
        let n = x.nrows();
        (Just(x), Just((0..n).collect::<Vec<usize>>()).prop_shuffle(), 3usize..8, 1usize..6)
    });
    report(runner(48).run(&strategy, |(x, perm, mcs, ms)| {
        let params = HdbscanParams {
            min_cluster_size: mcs,
            min_samples: ms,
        };
        let base = hdbscan(x.view(), &params).unwrap().canonical().labels;
        let shuffled = x.select(Axis(0), &perm);
        let moved = hdbscan(shuffled.view(), &params).unwrap();
        prop_assert_eq!(canonical_in_original_order(&moved.labels, &perm), base);
        Ok(())
    }))
}

fn mst_oracle(w: &Array2<f64>) -> f64 {
    // Grow the tree by scanning every (inside, outside) pair each step.
    let n = w.nrows();
    let mut inside = vec![false; n];
    inside[0] = true;
    let mut total = 0.0;
    for _ in 1..n {
        let mut best = (f64::INFINITY, 0);
        for a in 0..n {
            if !inside[a] {
                continue;
            }
            for b in 0..n {
                if !inside[b] && w[[a, b]] < best.0 {
                    best = (w[[a, b]], b);
                }
            }
        }
        inside[best.1] = true;
        total += best.0;
    }
    total
}

/// MST weight matches the cubic oracle; mutual reachability dominates the
/// metric; selected clusters satisfy the excess-of-mass optimality condition.
pub fn hdbscan_structure() -> Result<(), String> {
    report(runner(40).run(&(matrix(2..120, 1..5, 5.0), 1usize..8, 2usize..10), |(x, ms, mcs)| {
        let dist = pairwise_distances(x.view());
        let core = core_distances(&dist, ms);
        let mr = mutual_reachability(&dist, &core);
        for (m, d) in mr.iter().zip(dist.iter()) {
            prop_assert!(m >= d);
        }
        let mst = minimum_spanning_tree(&mr);
        prop_assert_eq!(mst.len(), x.nrows() - 1);
        let total: f64 = mst.iter().map(|e| e.2).sum();
        let oracle = mst_oracle(&mr);
        prop_assert!((total - oracle).abs() <= 1e-9 * oracle.max(1.0));

        let tree = hdbscan_tree(
            x.view(),
            &HdbscanParams {
                min_cluster_size: mcs,
                min_samples: ms,
            },
        )
        .unwrap();
        let k = tree.stability.len();
        let mut children = vec![Vec::new(); k];
        for e in &tree.condensed {
            if let CondensedChild::Cluster(c) = e.child {
                children[e.parent].push(c);
            }
        }
        let mut best = tree.stability.clone();
        for c in (0..k).rev() {
            let below: f64 = children[c].iter().map(|&d| best[d]).sum();
            if !children[c].is_empty() && below > best[c] {
                best[c] = below;
            }
        }
        for c in 0..k {
            if tree.selected[c] && c != 0 {
                let below: f64 = children[c].iter().map(|&d| best[d]).sum();
                prop_assert!(tree.stability[c] >= below);
            }
        }
        let sizes = tree.labeling.sizes();
        prop_assert!(sizes.iter().all(|&s| s >= mcs));
        Ok(())
    }))
}

fn kink_margin(net: &Mlp, x: &Array2<f64>) -> f64 {
    let mut a = x.clone();
    let mut margin = f64::INFINITY;
    for layer in &net.layers[..net.layers.len() - 1] {
        let z = a.dot(&layer.weights) + &layer.bias;
        margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
        a = z.mapv(|v| v.max(0.0));
    }
    margin
}

/// Backpropagated gradients agree with central differences.
pub fn mlp_gradient_check() -> Result<(), String> {
    let strategy = (
        2usize..5,
        proptest::collection::vec(2usize..6, 1..3),
        2usize..4,
        any::<u64>(),
        matrix(6..12, 4..5, 2.0),
        proptest::collection::vec(-0.5..0.5f64, 16),
    );
    report(runner(24).run(&strategy, |(p, hidden, k, seed, raw, biases)| {
        let x = raw.slice(ndarray::s![.., ..p]).to_owned();
        let y: Vec<usize> = (0..x.nrows()).map(|i| i % k).collect();
        let mut sizes = vec![p];
        sizes.extend(&hidden);
        sizes.push(k);
        let mut net = Mlp::init(&sizes, seed).unwrap();
        for (l, layer) in net.layers.iter_mut().enumerate() {
            for (u, b) in layer.bias.iter_mut().enumerate() {
                *b = biases[(4 * l + u) % biases.len()];
            }
        }
        for stage in 0..2 {
            if stage == 1 {
                // One plain gradient step stands in for "after an epoch".
                let (_, g) = net.loss_and_gradient(x.view(), &y);
                let flat: Vec<f64> = net
                    .flat_params()
                    .iter()
                    .zip(Mlp::flatten_gradient(&g))
                    .map(|(w, g)| w - 0.1 * g)
                    .collect();
                net.set_flat_params(&flat);
            }
            // ReLU is not differentiable at 0; central differences straddling a
            // kink measure nothing useful.
            prop_assume!(kink_margin(&net, &x) > 1e-4);
            let (_, grads) = net.loss_and_gradient(x.view(), &y);
            let analytic = Mlp::flatten_gradient(&grads);
            let params = net.flat_params();
            let h = 1e-6;
            let mut diff2 = 0.0;
            let mut norm2 = 0.0;
            for i in 0..params.len() {
                let mut probe = net.clone();
                let mut plus = params.clone();
                plus[i] += h;
                probe.set_flat_params(&plus);
                let lp = probe.loss_and_gradient(x.view(), &y).0;
                let mut minus = params.clone();
                minus[i] -= h;
                probe.set_flat_params(&minus);
                let lm = probe.loss_and_gradient(x.view(), &y).0;
                let fd = (lp - lm) / (2.0 * h);
                diff2 += (fd - analytic[i]).powi(2);
                norm2 += fd.powi(2).max(analytic[i].powi(2));
            }
            let rel = diff2.sqrt() / norm2.sqrt().max(1e-12);
            prop_assert!(rel < 1e-4, "stage {stage}: relative error {rel}");
        }
        Ok(())
    }))
}

/// Training cross-entropy never increases from one boosting round to the next.
pub fn boosting_loss_monotone() -> Result<(), String> {
    let strategy = (matrix(30..80, 2..5, 3.0), 2usize..4, 0.05..0.3f64, 1usize..4, any::<u64>());
    report(runner(24).run(&strategy, |(x, k, eta, depth, salt)| {
        let n = x.nrows();
        let y: Vec<usize> = (0..n)
            .map(|i| {
                let s = x[[i, 0]] + 0.5 * x[[i, 1]] + ((i as u64 ^ salt) % 3) as f64 * 0.7;
                (s.rem_euclid(k as f64)) as usize % k
            })
            .collect();
        let mut labels = y;
        for c in 0..k {
            labels[c] = c;
        }
        let names: Vec<String> = (0..x.ncols()).map(|j| format!("f{j}")).collect();
        let classes: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
        let ds = Dataset::new(x, labels, names, classes).unwrap();
        let model = train_boosted(
            &ds,
            &BoostParams {
                n_rounds: 15,
                learning_rate: eta,
                max_depth: depth,
                ..BoostParams::default()
            },
        )
        .unwrap();
        for w in model.training_loss.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "loss rose from {} to {}", w[0], w[1]);
        }
        Ok(())
    }))
}

/// TreeSHAP values of random trees add up to prediction minus expectation.
pub fn tree_shap_additivity() -> Result<(), String> {
    report(runner(64).run(&(any::<u64>(), 1usize..7, 1usize..6, 1usize..4), |(seed, p, depth, k)| {
        let mut rng = super::rng(seed);
        let tree = super::random_tree(&mut rng, p, depth, k);
        let x = super::random_point(&mut rng, p);
        let phi = tree_shap_values(&tree, &x).unwrap();
        let expected = tree.expected_value();
        let pred = tree.predict(&x);
        for c in 0..k {
            let s: f64 = phi.column(c).sum();
            prop_assert!((s - (pred[c] - expected[c])).abs() < 1e-10);
        }
        Ok(())
    }))
}

/// Flattening round-trips and orders path segments and bars by magnitude.
pub fn tensor_and_plot_orderings() -> Result<(), String> {
    let strategy = (1usize..5, 1usize..7, 1usize..4).prop_flat_map(|(n, p, k)| {
        proptest::collection::vec(-2.0..2.0f64, n * p * k)
            .prop_map(move |v| Array3::from_shape_vec((n, p, k), v).unwrap())
    });
    report(runner(64).run(&strategy, |values| {
        let k = values.dim().2;
        let t = ShapTensor::new(values.clone(), vec![0.0; k]).unwrap();
        let back = ShapTensor::unflatten(&t.flatten(), k, vec![0.0; k]).unwrap();
        prop_assert_eq!(back.values(), &values);
        let set = build_paths(&t, &Grouping::Samples((0..t.n_samples()).collect()), None).unwrap();
        for path in &set.paths {
            let norms: Vec<f64> = path
                .entries
                .iter()
                .map(|e| e.segment.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect();
            prop_assert!(norms.windows(2).all(|w| w[0] >= w[1]));
        }
        let meanabs = t.mean_abs();
        let order = top_features(meanabs.view(), usize::MAX);
        let heights: Vec<f64> = order.iter().map(|&j| meanabs.row(j).sum()).collect();
        prop_assert!(heights.windows(2).all(|w| w[0] >= w[1]));
        Ok(())
    }))
}

pub type Suite = fn() -> Result<(), String>;

pub const SUITES: [(&str, Suite); 7] = [
    ("pca", pca_properties),
    ("hdbscan permutation", hdbscan_permutation_invariance),
    ("hdbscan structure", hdbscan_structure),
    ("mlp gradient", mlp_gradient_check),
    ("boosting monotone", boosting_loss_monotone),
    ("tree shap additivity", tree_shap_additivity),
    ("orderings", tensor_and_plot_orderings),
];
