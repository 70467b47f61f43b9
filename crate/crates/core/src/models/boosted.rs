//! Newton-boosted tree ensemble with a multi-class softmax objective.
//!
//! Each round fits one regression tree per class to the gradient `pᵢc − yᵢc`
//! and hessian `pᵢc(1 − pᵢc)` of the cross-entropy, with leaf weights
//! `−G / (H + λ)` and split gain
//! `½ [G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)]`.

use serde::{Deserialize, Serialize};

use super::tree::{build_tree_presorted, BuildLimits, Criterion, Presorted, Tree};
use super::{log_loss, softmax_in_place, MarginModel};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub max_depth: usize,
    /// Minimum hessian sum in a child.
    pub min_child_weight: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            learning_rate: 0.1,
            lambda: 1.0,
            max_depth: 3,
            min_child_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub params: BoostParams,
    pub base_score: Vec<f64>,
    /// `rounds[r][c]` is the tree for class `c` in round `r`. Leaf values are
    /// stored before shrinkage by the learning rate.
    pub rounds: Vec<Vec<Tree>>,
    pub n_features: usize,
    /// Mean training cross-entropy before the first round and after each round.
    pub training_loss: Vec<f64>,
}

impl MarginModel for BoostedEnsemble {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_classes(&self) -> usize {
        self.base_score.len()
    }

    fn margin_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.base_score);
        let eta = self.params.learning_rate;
        for round in &self.rounds {
            for (c, tree) in round.iter().enumerate() {
                out[c] += eta * tree.predict(x)[0];
            }
        }
    }
}

struct Newton<'a> {
    grad: &'a [f64],
    hess: &'a [f64],
    lambda: f64,
    min_child_weight: f64,
}

#[derive(Clone)]
struct GradStats {
    g: f64,
    h: f64,
    n: usize,
}

impl Newton<'_> {
    fn score(&self, s: &GradStats) -> f64 {
        s.g * s.g / (s.h + self.lambda)
    }
}

impl Criterion for Newton<'_> {
    type Stats = GradStats;

    fn empty(&self) -> GradStats {
        GradStats {
            g: 0.0,
            h: 0.0,
            n: 0,
        }
    }

    fn add(&self, s: &mut GradStats, i: usize) {
        s.g += self.grad[i];
        s.h += self.hess[i];
        s.n += 1;
    }

    fn difference(&self, whole: &GradStats, part: &GradStats) -> GradStats {
        GradStats {
            g: whole.g - part.g,
            h: whole.h - part.h,
            n: whole.n - part.n,
        }
    }

    fn count(&self, s: &GradStats) -> usize {
        s.n
    }

    fn admissible(&self, child: &GradStats) -> bool {
        child.n >= 1 && child.h >= self.min_child_weight
    }

    fn gain(&self, parent: &GradStats, left: &GradStats, right: &GradStats) -> f64 {
        0.5 * (self.score(left) + self.score(right) - self.score(parent))
    }

    fn is_pure(&self, _: &GradStats) -> bool {
        false
    }

    fn leaf_value(&self, s: &GradStats) -> Vec<f64> {
        vec![-s.g / (s.h + self.lambda)]
    }
}

/// Fits a boosted ensemble; deterministic in its inputs.
pub fn train_boosted(train: &Dataset, params: &BoostParams) -> Result<BoostedEnsemble> {
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(Error::InvalidSpec(format!(
            "learning_rate must lie in (0, 1], got {}",
            params.learning_rate
        )));
    }
    if params.lambda < 0.0 {
        return Err(Error::InvalidSpec("lambda must be non-negative".into()));
    }
    let (n, k) = (train.n_samples(), train.n_classes());
    let x = train.features();
    let y = train.labels();
    let base_score: Vec<f64> = train
        .class_counts()
        .iter()
        .map(|&c| (c as f64 / n as f64).max(1e-6).ln())
        .collect();

    let mut margins: Vec<Vec<f64>> = vec![base_score.clone(); n];
    let mut training_loss = vec![log_loss(&margins, y)];
    let samples: Vec<usize> = (0..n).collect();
    let presorted = Presorted::new(x, &samples);
    let limits = BuildLimits {
        max_depth: params.max_depth,
        min_samples_split: 2,
    };
    let mut rounds = Vec::with_capacity(params.n_rounds);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for round in 0..params.n_rounds {
        let probs: Vec<Vec<f64>> = margins
            .iter()
            .map(|m| {
                let mut p = m.clone();
                softmax_in_place(&mut p);
                p
            })
            .collect();
        let mut trees = Vec::with_capacity(k);
        for c in 0..k {
            for i in 0..n {
                let p = probs[i][c];
                grad[i] = p - f64::from(u8::from(y[i] == c));
                hess[i] = (p * (1.0 - p)).max(1e-16);
            }
            let criterion = Newton {
                grad: &grad,
                hess: &hess,
                lambda: params.lambda,
                min_child_weight: params.min_child_weight,
            };
            trees.push(build_tree_presorted(x, &presorted, &criterion, &limits, 1));
        }
        for (i, m) in margins.iter_mut().enumerate() {
            let row = x.row(i);
            let row = row.as_slice().expect("standard layout");
            for (c, tree) in trees.iter().enumerate() {
                m[c] += params.learning_rate * tree.predict(row)[0];
            }
        }
        let loss = log_loss(&margins, y);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                stage: "round",
                index: round,
            });
        }
        training_loss.push(loss);
        rounds.push(trees);
    }
    Ok(BoostedEnsemble {
        params: *params,
        base_score,
        rounds,
        n_features: train.n_features(),
        training_loss,
    })
}
