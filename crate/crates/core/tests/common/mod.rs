#![allow(dead_code, clippy::needless_range_loop)]

pub mod oracle;
pub mod properties;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use shapvec::models::{Node, Tree};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random tree in preorder with integer leaf covers and random leaf values.
/// Features may repeat along a path.
pub fn random_tree(rng: &mut ChaCha8Rng, n_features: usize, max_depth: usize, n_outputs: usize) -> Tree {
    fn grow(
        rng: &mut ChaCha8Rng,
        nodes: &mut Vec<Node>,
        depth: usize,
        max_depth: usize,
        p: usize,
        k: usize,
    ) -> (usize, f64) {
        let id = nodes.len();
        let is_leaf = depth == max_depth || (depth > 0 && rng.random_bool(0.25));
        if is_leaf {
            let cover = rng.random_range(1..20) as f64;
            let value = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            nodes.push(Node::Leaf { value, cover });
            return (id, cover);
        }
        nodes.push(Node::Leaf {
            value: vec![],
            cover: 0.0,
        });
        let feature = rng.random_range(0..p);
        let threshold = rng.random_range(-1.0..1.0);
        let (left, lc) = grow(rng, nodes, depth + 1, max_depth, p, k);
        let (right, rc) = grow(rng, nodes, depth + 1, max_depth, p, k);
        nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
            cover: lc + rc,
        };
        (id, lc + rc)
    }
    let mut nodes = Vec::new();
    grow(rng, &mut nodes, 0, max_depth, n_features, n_outputs);
    Tree::from_nodes(nodes, n_features, n_outputs).expect("well-formed random tree")
}

pub fn random_point(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    (0..p).map(|_| rng.random_range(-1.2..1.2)).collect()
}
